"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or input, 3 failure inside a stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as cio
from .errors import CamguideError, InvalidArgumentError, ParseError
from .geometry import DEFAULT_VFOV_DEG, PinholeCamera
from .metrics import PoseTrack, evaluate
from .pipeline import MANIFEST_NAME, PipelineConfig, load_source, resolve_filler, run, run_manifest, write_stage_one
from .pointcloud import extend_rendered_depth, stage_one
from .synthetic import SyntheticScene

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("camguide")


def _add_input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", type=Path, help="colour raster (binary PPM); omit to use the synthetic scene")
    p.add_argument("--depth", type=Path, help="depth raster (PFM), required with --input")
    p.add_argument("--size", type=int, default=128, help="synthetic scene raster size (default 128)")
    p.add_argument("--trajectory", type=Path, required=True, help="trajectory spec (JSON)")
    p.add_argument("--frames", type=int, default=14)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filler", choices=("constant", "diffuse", "analytic"), default="diffuse")
    p.add_argument("--vfov", type=float, default=DEFAULT_VFOV_DEG, help="vertical field of view in degrees")
    p.add_argument("--prompt", default=None)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camguide", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-scene", help="write the synthetic scene's colour and depth rasters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--vfov", type=float, default=DEFAULT_VFOV_DEG)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("render-trajectory", help="run Stage I only and write guidance frames and masks")
    _add_input_args(p)

    p = sub.add_parser("generate", help="run the full pipeline")
    _add_input_args(p)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--t0", type=int, default=15, help="start position on the sampling ladder")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--noise-mode", choices=("independent", "shared"), default="independent")
    p.add_argument("--denoiser", choices=("smoothing", "oracle"), default="smoothing")

    p = sub.add_parser("rerun", help="replay a run from its run.json manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="ATE / RPE between two pose files")
    p.add_argument("--estimate", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--no-scale", action="store_true", help="align without scale")
    p.add_argument("--out", type=Path, help="also write the JSON report here")

    p = sub.add_parser("export-poses", help="expand a trajectory spec into a pose file")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--depth", type=Path, help="PFM depth used to estimate the rotate focus distance")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _load_input(args, camera_vfov: float):
    """Returns (frame, scene, source-record)."""
    if args.input is None:
        source = {"kind": "synthetic", "seed": args.seed, "size": args.size, "vfov_deg": camera_vfov}
    else:
        if args.depth is None:
            raise InvalidArgumentError("--depth is required with --input")
        source = {"kind": "files", "color": str(args.input), "depth": str(args.depth)}
    frame, scene = load_source(source)
    return frame, scene, source


def _cmd_synth_scene(args) -> int:
    camera = PinholeCamera.default(args.size, args.size, args.vfov)
    scene = SyntheticScene.from_seed(args.seed)
    frame = scene.render(camera)
    args.out.mkdir(parents=True, exist_ok=True)
    cio.write_ppm(args.out / "color.ppm", frame.color)
    cio.write_pfm(args.out / "depth.pfm", frame.depth)
    cio.write_json(args.out / "scene.json", {"seed": args.seed, "size": args.size, "vfov_deg": args.vfov, "camera": asdict(camera)})
    print(args.out)
    return EXIT_OK


def _cmd_render(args) -> int:
    config = PipelineConfig(frames=args.frames, seed=args.seed, filler=args.filler, vfov_deg=args.vfov, prompt=args.prompt)
    config.validate()
    frame, scene, source = _load_input(args, args.vfov)
    spec = cio.load_trajectory_spec(args.trajectory)
    trajectory = cio.trajectory_from_spec(spec, depth=frame.depth)
    if len(trajectory) != config.frames:
        raise InvalidArgumentError(f"trajectory has {len(trajectory)} poses but --frames is {config.frames}")
    H, W = frame.shape
    camera = config.camera(W, H)
    filler = resolve_filler(config, camera, scene)
    provider = scene.depth_provider(camera) if scene is not None else extend_rendered_depth
    try:
        result = stage_one(frame, trajectory, camera, filler, provider, prompt=args.prompt)
    except CamguideError as exc:
        log.error("stage I failed: %s", exc)
        return EXIT_STAGE
    names = write_stage_one(args.out, result)
    cio.write_json(
        args.out / "stage1.json",
        {
            "source": source,
            "trajectory": spec,
            "camera": asdict(camera),
            "frames": names,
            "depth_coefficients": result.depth_scales,
            "hole_fractions": result.hole_fractions,
            "warnings": result.warnings,
        },
    )
    return EXIT_OK


def _cmd_generate(args) -> int:
    config = PipelineConfig(
        frames=args.frames,
        steps=args.steps,
        t0_index=args.t0,
        eta=args.eta,
        seed=args.seed,
        noise_mode=args.noise_mode,
        filler=args.filler,
        denoiser=args.denoiser,
        vfov_deg=args.vfov,
        prompt=args.prompt,
    )
    config.validate()
    frame, scene, source = _load_input(args, args.vfov)
    spec = cio.load_trajectory_spec(args.trajectory)
    trajectory = cio.trajectory_from_spec(spec, depth=frame.depth)
    if len(trajectory) != config.frames:
        raise InvalidArgumentError(f"trajectory has {len(trajectory)} poses but --frames is {config.frames}")
    try:
        run(frame, trajectory, config, out_dir=args.out, scene=scene, source=source, trajectory_spec=spec)
    except InvalidArgumentError:
        raise
    except CamguideError as exc:
        log.error("pipeline failed: %s (partial manifest in %s)", exc, args.out / MANIFEST_NAME)
        return EXIT_STAGE
    print(args.out / MANIFEST_NAME)
    return EXIT_OK


def _cmd_rerun(args) -> int:
    try:
        run_manifest(args.manifest, args.out)
    except (InvalidArgumentError, ParseError):
        raise
    except CamguideError as exc:
        log.error("pipeline failed: %s", exc)
        return EXIT_STAGE
    print(args.out / MANIFEST_NAME)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    est = PoseTrack.of(cio.read_poses(args.estimate))
    ref = PoseTrack.of(cio.read_poses(args.reference))
    report = evaluate(est, ref, delta=args.delta, with_scale=not args.no_scale)
    text = json.dumps(report, sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_export(args) -> int:
    depth = cio.read_pfm(args.depth).astype(np.float64) if args.depth else None
    trajectory = cio.trajectory_from_spec(cio.load_trajectory_spec(args.trajectory), depth=depth)
    cio.write_poses(args.out, trajectory)
    return EXIT_OK


COMMANDS = {
    "synth-scene": _cmd_synth_scene,
    "render-trajectory": _cmd_render,
    "generate": _cmd_generate,
    "rerun": _cmd_rerun,
    "evaluate": _cmd_evaluate,
    "export-poses": _cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CamguideError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

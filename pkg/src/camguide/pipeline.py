"""End-to-end run: Stage I guidance frames -> inversion -> generation -> frames on disk."""

from __future__ import annotations

import functools
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import numpy as np

from . import __version__
from . import io as cio
from .diffusion import (
    RNG_ALGORITHM,
    NOISE_MODES,
    LatentSequence,
    generate,
    invert,
    make_schedule,
    oracle_denoiser,
    select_sampling_steps,
    smoothing_denoiser,
)
from .errors import CamguideError, InvalidArgumentError
from .geometry import DEFAULT_VFOV_DEG, PinholeCamera, Trajectory
from .pointcloud import BUILTIN_FILLERS, RgbdFrame, StageOneResult, extend_rendered_depth, stage_one
from .synthetic import SyntheticScene

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "camguide.run/1"
MANIFEST_NAME = "run.json"
FILLERS = ("constant", "diffuse", "analytic")
DENOISERS = ("smoothing", "oracle")


@dataclass
class PipelineConfig:
    frames: int = 14
    steps: int = 25
    t0_index: int = 15
    eta: float = 1.0
    seed: int = 0
    noise_mode: str = "independent"
    filler: str = "diffuse"
    denoiser: str = "smoothing"
    schedule: str = "linear"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    vfov_deg: float = DEFAULT_VFOV_DEG
    fx: Optional[float] = None
    fy: Optional[float] = None
    cx: Optional[float] = None
    cy: Optional[float] = None
    prompt: Optional[str] = None
    save_latents: bool = True

    def validate(self) -> None:
        if self.frames < 1:
            raise InvalidArgumentError(f"frames must be >= 1, got {self.frames}")
        if not 1 <= self.steps <= self.T:
            raise InvalidArgumentError(f"steps must be within 1..{self.T}, got {self.steps}")
        if not 0 <= self.t0_index <= self.steps:
            raise InvalidArgumentError(f"t0_index must be within 0..{self.steps}, got {self.t0_index}")
        if self.eta < 0:
            raise InvalidArgumentError(f"eta must be >= 0, got {self.eta}")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.noise_mode not in NOISE_MODES:
            raise InvalidArgumentError(f"noise_mode must be one of {NOISE_MODES}")
        if self.filler not in FILLERS:
            raise InvalidArgumentError(f"filler must be one of {FILLERS}")
        if self.denoiser not in DENOISERS:
            raise InvalidArgumentError(f"denoiser must be one of {DENOISERS}")

    def camera(self, width: int, height: int) -> PinholeCamera:
        base = PinholeCamera.default(width, height, self.vfov_deg)
        return PinholeCamera(
            base.fx if self.fx is None else self.fx,
            base.fy if self.fy is None else self.fy,
            base.cx if self.cx is None else self.cx,
            base.cy if self.cy is None else self.cy,
            width,
            height,
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PipelineResult:
    frames: list[np.ndarray]
    stage_one: StageOneResult
    manifest: dict
    latents_t0: Optional[LatentSequence] = None


def to_latents(frames) -> np.ndarray:
    """[0, 1] H x W x 3 frames -> N x 3 x H x W in [-1, 1]."""
    return np.stack([2.0 * np.asarray(f, dtype=np.float64) - 1.0 for f in frames]).transpose(0, 3, 1, 2)


def from_latents(data: np.ndarray) -> list[np.ndarray]:
    return [np.clip((x.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0) for x in data]


def _seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    inv, gen = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(inv)), np.random.Generator(np.random.PCG64(gen))


def _write_frames(folder: Path, frames, masks=None) -> list[str]:
    folder.mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(frames):
        name = f"frame_{i:04d}.ppm"
        cio.write_ppm(folder / name, f)
        names.append(name)
        if masks is not None:
            cio.write_pgm(folder / f"mask_{i:04d}.pgm", masks[i])
    return names


def write_stage_one(out_dir: Path, result: StageOneResult) -> list[str]:
    return _write_frames(Path(out_dir), result.frames, [r.mask for r in result.renders])


def resolve_filler(config: PipelineConfig, camera: PinholeCamera, scene: Optional[SyntheticScene]):
    if config.filler == "analytic":
        if scene is None:
            raise InvalidArgumentError("the analytic filler needs the synthetic scene as input")
        return scene.filler(camera)
    return BUILTIN_FILLERS[config.filler]()


def run(
    frame: RgbdFrame,
    trajectory: Trajectory,
    config: PipelineConfig,
    denoiser: Optional[Callable] = None,
    *,
    out_dir=None,
    depth_provider: Optional[Callable] = None,
    filler: Optional[Callable] = None,
    scene: Optional[SyntheticScene] = None,
    source: Optional[Mapping[str, Any]] = None,
    trajectory_spec: Optional[Mapping[str, Any]] = None,
) -> PipelineResult:
    """Run both stages and, when ``out_dir`` is given, write frames and ``run.json``.

    ``source`` and ``trajectory_spec`` are recorded in the manifest so the run
    can be replayed with :func:`run_manifest`. With ``scene`` given, analytic
    depth is used for completed views; otherwise the rendered depth is
    extended into holes.
    """
    config.validate()
    if len(trajectory) != config.frames:
        raise InvalidArgumentError(f"trajectory has {len(trajectory)} poses but config.frames = {config.frames}")
    H, W = frame.shape
    camera = config.camera(W, H)
    out = Path(out_dir) if out_dir is not None else None
    if depth_provider is None:
        depth_provider = scene.depth_provider(camera) if scene is not None else extend_rendered_depth
    if filler is None:
        filler = resolve_filler(config, camera, scene)

    schedule = select_sampling_steps(make_schedule(config.schedule, config.T, config.beta_start, config.beta_end), config.steps)
    t0 = schedule.timestep(config.t0_index)
    manifest: dict[str, Any] = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "status": "running",
        "config": asdict(config),
        "source": dict(source) if source else {"kind": "in-memory"},
        "trajectory": dict(trajectory_spec) if trajectory_spec else {"extrinsics": [m.reshape(-1).tolist() for m in trajectory.matrices()]},
        "camera": asdict(camera),
        "rng": {"algorithm": RNG_ALGORITHM, "seed": config.seed, "streams": ["inversion", "generation"], "numpy": np.__version__},
        "schedule": schedule.metadata(),
        "t0": t0,
        "denoiser": config.denoiser if denoiser is None else getattr(denoiser, "__name__", "custom"),
    }
    stage = "stage_one"
    try:
        s1 = stage_one(frame, trajectory, camera, filler, depth_provider, prompt=config.prompt)
        manifest["depth_coefficients"] = s1.depth_scales
        manifest["hole_fractions"] = s1.hole_fractions
        manifest["cloud_sizes"] = s1.cloud_sizes
        manifest["warnings"] = s1.warnings
        outputs: dict[str, Any] = {}
        if out is not None:
            outputs["stage1"] = ["stage1/" + n for n in write_stage_one(out / "stage1", s1)]

        stage = "inversion"
        inv_rng, gen_rng = _seed_streams(config.seed)
        V0 = LatentSequence(to_latents(s1.frames))
        Vt = invert(V0, config.t0_index, schedule, inv_rng, config.noise_mode)
        if out is not None and config.save_latents:
            meta = {
                "seed": config.seed,
                "rng": RNG_ALGORITHM,
                "schedule": schedule.metadata(),
                "eta": config.eta,
                "t0_index": config.t0_index,
                "noise_mode": config.noise_mode,
            }
            folder = cio.write_latents(out / "latents", Vt.data, t0, meta)
            outputs["latents"] = folder.relative_to(out).as_posix()

        stage = "generation"
        if denoiser is None:
            if config.denoiser == "oracle":
                denoiser = oracle_denoiser(Vt.noise)
            else:
                denoiser = functools.partial(smoothing_denoiser, schedule=schedule)
        if config.t0_index == 0:
            frames = [f.copy() for f in s1.frames]
        else:
            frames = from_latents(generate(Vt, config.t0_index, denoiser, schedule, config.eta, gen_rng, config.noise_mode).data)

        stage = "write"
        if out is not None:
            outputs["frames"] = ["frames/" + n for n in _write_frames(out / "frames", frames)]
        manifest["outputs"] = outputs
        manifest["status"] = "ok"
    except CamguideError as exc:
        manifest["status"] = "failed"
        manifest["failed_stage"] = stage
        manifest["error"] = str(exc)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            cio.write_json(out / MANIFEST_NAME, manifest)
        raise
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cio.write_json(out / MANIFEST_NAME, manifest)
    return PipelineResult(frames, s1, manifest, Vt)


def load_source(source: Mapping[str, Any]) -> tuple[RgbdFrame, Optional[SyntheticScene]]:
    """Rebuild the input frame described by a manifest ``source`` entry."""
    kind = source.get("kind")
    if kind == "synthetic":
        size = int(source["size"])
        scene = SyntheticScene.from_seed(int(source["seed"]))
        return scene.render(PinholeCamera.default(size, size, float(source.get("vfov_deg", DEFAULT_VFOV_DEG)))), scene
    if kind == "files":
        color = cio.read_color(source["color"])
        depth = cio.read_pfm(source["depth"]).astype(np.float64)
        return RgbdFrame(color, depth), None
    raise InvalidArgumentError(f"cannot rebuild input of kind {kind!r}")


def run_manifest(manifest_path, out_dir) -> PipelineResult:
    manifest = cio.load_json(manifest_path)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise InvalidArgumentError(f"unsupported manifest schema {manifest.get('schema')!r}")
    config = PipelineConfig.from_dict(manifest["config"])
    frame, scene = load_source(manifest["source"])
    spec = manifest["trajectory"]
    trajectory = cio.trajectory_from_spec(spec, depth=frame.depth)
    return run(frame, trajectory, config, out_dir=out_dir, scene=scene, source=manifest["source"], trajectory_spec=spec)

"""File codecs: binary PPM/PGM, PFM, pose-track text files, trajectory JSON and latent dumps."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .geometry import MotionPrimitive, Trajectory, build_primitive, combine, estimate_focus_distance, from_extrinsics

PathLike = Union[str, os.PathLike]

_WS = b" \t\r\n\v\f"


# -- netpbm -------------------------------------------------------------------


def _header_tokens(buf: bytes, count: int, pos: int = 0) -> tuple[list[tuple[bytes, int]], int]:
    """Read ``count`` whitespace-separated header tokens from ``pos`` on (skipping '#' comments).

    Returns the tokens with their byte offsets and the offset just past the
    single whitespace byte that terminates the last token.
    """
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise ParseError(f"header ended early: expected {count} fields, found {len(tokens)}", pos)
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        tokens.append((buf[start:pos], start))
    if pos >= n or buf[pos] not in _WS:
        raise ParseError("missing whitespace after header", pos)
    return tokens, pos + 1


def _int_field(tok: bytes, offset: int, name: str, lo: int = 1, hi: int = 2**31 - 1) -> int:
    if not tok.isdigit():
        raise ParseError(f"invalid {name} {tok!r}", offset)
    value = int(tok)
    if not lo <= value <= hi:
        raise ParseError(f"{name} {value} outside {lo}..{hi}", offset)
    return value


def _decode_netpbm(buf: bytes, magic: bytes, channels: int) -> np.ndarray:
    if buf[:2] != magic:
        raise ParseError(f"expected magic {magic.decode()}, got {buf[:2]!r}", 0)
    tokens, start = _header_tokens(buf, 3, 2)
    (w, wo), (h, ho), (m, mo) = tokens
    width = _int_field(w, wo, "width")
    height = _int_field(h, ho, "height")
    maxval = _int_field(m, mo, "maxval", 1, 65535)
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    expected = width * height * channels * dtype.itemsize
    actual = len(buf) - start
    if actual < expected:
        raise ParseError(f"truncated pixel data: expected {expected} bytes, got {actual}", start)
    data = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=start)
    if np.any(data > maxval):
        raise ParseError(f"sample exceeds maxval {maxval}", start)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return data.reshape(shape).astype(np.uint8 if maxval < 256 else np.uint16)


def _encode_netpbm(magic: bytes, arr: np.ndarray) -> bytes:
    h, w = arr.shape[:2]
    maxval = 255 if arr.dtype == np.uint8 else 65535
    data = arr.astype(np.uint8 if maxval == 255 else ">u2").tobytes()
    return magic + f"\n{w} {h}\n{maxval}\n".encode("ascii") + data


def to_uint8(color: np.ndarray) -> np.ndarray:
    """Quantise a [0, 1] float raster to 8 bits (round to nearest)."""
    color = np.asarray(color)
    if color.dtype == np.uint8:
        return color
    return np.floor(np.clip(color, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_ppm(path: PathLike) -> np.ndarray:
    return _decode_netpbm(Path(path).read_bytes(), b"P6", 3)


def write_ppm(path: PathLike, color: np.ndarray) -> None:
    arr = np.asarray(color)
    if arr.dtype not in (np.uint8, np.uint16):
        arr = to_uint8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"PPM needs H x W x 3, got {arr.shape}")
    Path(path).write_bytes(_encode_netpbm(b"P6", arr))


def read_pgm(path: PathLike) -> np.ndarray:
    return _decode_netpbm(Path(path).read_bytes(), b"P5", 1)


def write_pgm(path: PathLike, gray: np.ndarray) -> None:
    arr = np.asarray(gray)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    elif arr.dtype not in (np.uint8, np.uint16):
        arr = to_uint8(arr)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"PGM needs H x W, got {arr.shape}")
    Path(path).write_bytes(_encode_netpbm(b"P5", arr))


def read_mask(path: PathLike) -> np.ndarray:
    """Known-pixel mask stored as PGM (255 = known)."""
    return read_pgm(path) > 0


def read_color(path: PathLike) -> np.ndarray:
    arr = read_ppm(path)
    return arr.astype(np.float64) / (255.0 if arr.dtype == np.uint8 else 65535.0)


# -- PFM ---------------------------------------------------------------------


def decode_pfm(buf: bytes) -> np.ndarray:
    """Decode a PFM byte string into a top-row-first float32 array."""
    if buf[:2] == b"Pf":
        channels = 1
    elif buf[:2] == b"PF":
        channels = 3
    else:
        raise ParseError(f"expected PFM magic Pf or PF, got {buf[:2]!r}", 0)
    tokens, start = _header_tokens(buf, 3, 2)
    (w, wo), (h, ho), (s, so) = tokens
    width = _int_field(w, wo, "width")
    height = _int_field(h, ho, "height")
    try:
        scale = float(s)
    except ValueError:
        raise ParseError(f"invalid scale {s!r}", so) from None
    if scale == 0 or not np.isfinite(scale):
        raise ParseError(f"scale must be finite and non-zero, got {scale}", so)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    actual = len(buf) - start
    if actual < 4 * count:
        raise ParseError(f"truncated float data: expected {4 * count} bytes, got {actual}", start)
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=start).astype(np.float32)
    shape = (height, width, channels) if channels == 3 else (height, width)
    # PFM rows run bottom to top
    return np.ascontiguousarray(data.reshape(shape)[::-1])


def encode_pfm(arr: np.ndarray) -> bytes:
    """Little-endian PFM (scale -1.0)."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise InvalidArgumentError(f"PFM needs H x W or H x W x 3, got {arr.shape}")
    h, w = arr.shape[:2]
    header = magic + f"\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes()


def read_pfm(path: PathLike) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


def write_pfm(path: PathLike, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_pfm(arr))


# -- pose tracks --------------------------------------------------------------


def format_poses(matrices) -> str:
    lines = ["# world-to-camera poses, row-major 3x4 per line"]
    for m in matrices:
        m = np.asarray(m, dtype=np.float64)[:3, :4]
        lines.append(" ".join(repr(float(x)) for x in m.reshape(-1)))
    return "\n".join(lines) + "\n"


def parse_poses(text: str) -> list[np.ndarray]:
    matrices = []
    offset = 0
    for lineno, line in enumerate(text.splitlines(keepends=True), start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            fields = body.split()
            if len(fields) != 12:
                raise ParseError(f"line {lineno}: expected 12 numbers, got {len(fields)}", offset)
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}", offset) from None
            matrices.append(np.array(values).reshape(3, 4))
        offset += len(line.encode("utf-8"))
    return matrices


def write_poses(path: PathLike, trajectory: Trajectory) -> None:
    Path(path).write_text(format_poses(trajectory.matrices()), encoding="utf-8")


def read_poses(path: PathLike) -> Trajectory:
    return from_extrinsics(parse_poses(Path(path).read_text(encoding="utf-8")))


# -- trajectory specs ---------------------------------------------------------


def trajectory_from_spec(spec: Mapping[str, Any], depth: Optional[np.ndarray] = None) -> Trajectory:
    """Build a trajectory from a parsed spec object.

    A rotate motion without ``focus_distance`` takes the mean centre-patch depth
    of ``depth`` when one is supplied.
    """
    if not isinstance(spec, Mapping):
        raise InvalidArgumentError("trajectory spec must be a JSON object")
    if ("motions" in spec) == ("extrinsics" in spec):
        raise InvalidArgumentError("trajectory spec needs exactly one of 'motions' or 'extrinsics'")
    if "extrinsics" in spec:
        return from_extrinsics(spec["extrinsics"])
    motions = spec["motions"]
    if not isinstance(motions, list) or not motions:
        raise InvalidArgumentError("'motions' must be a non-empty list")
    focus = spec.get("focus_distance")
    parts = []
    for i, m in enumerate(motions):
        try:
            prim = MotionPrimitive(str(m["kind"]), str(m["direction"]), float(m["magnitude"]), int(m["frames"]))
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"motion {i}: needs kind, direction, magnitude and frames ({exc})") from None
        f = focus
        if prim.kind == "rotate" and f is None and depth is not None:
            f = estimate_focus_distance(depth)
        parts.append(build_primitive(prim, focus_distance=None if f is None else float(f)))
    return combine(parts, spec.get("mode", "simultaneous"))


def load_json(path: PathLike) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", len(text[: exc.pos].encode("utf-8"))) from None


def load_trajectory_spec(path: PathLike) -> dict:
    spec = load_json(path)
    if not isinstance(spec, dict):
        raise InvalidArgumentError(f"{path}: trajectory spec must be a JSON object")
    return spec


def write_json(path: PathLike, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- latents ------------------------------------------------------------------


def write_latents(root: PathLike, data: np.ndarray, timestep: int, metadata: Mapping[str, Any]) -> Path:
    """One PFM per frame and channel under ``root/t{t}/`` plus ``metadata.json``."""
    folder = Path(root) / f"t{timestep}"
    folder.mkdir(parents=True, exist_ok=True)
    for n, frame in enumerate(data):
        for c, channel in enumerate(frame):
            write_pfm(folder / f"frame_{n}_c{c}.pfm", channel)
    write_json(folder / "metadata.json", dict(metadata, timestep=timestep, shape=list(data.shape)))
    return folder


_LATENT_NAME = re.compile(r"frame_(\d+)_c(\d+)\.pfm$")


def read_latents(folder: PathLike) -> tuple[np.ndarray, dict]:
    folder = Path(folder)
    meta = load_json(folder / "metadata.json")
    out = np.zeros(meta["shape"], dtype=np.float32)
    for p in folder.glob("frame_*_c*.pfm"):
        m = _LATENT_NAME.search(p.name)
        if m:
            out[int(m.group(1)), int(m.group(2))] = read_pfm(p)
    return out, meta

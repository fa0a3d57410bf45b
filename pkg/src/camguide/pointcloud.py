"""RGB-D lifting, z-buffered point rendering, hole filling and the per-view
depth-coefficient search that keeps newly lifted content aligned with the cloud.
"""

from __future__ import annotations

import inspect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .errors import EmptyCloudError, InvalidArgumentError, NoOverlapError, StageError
from .geometry import CameraPose, PinholeCamera, Trajectory

logger = logging.getLogger(__name__)

Z_NEAR = 1e-4

Filler = Callable[..., np.ndarray]
DepthProvider = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    color: np.ndarray  # H x W x 3, in [0, 1]
    depth: np.ndarray  # H x W, 0 marks invalid

    def __post_init__(self):
        color = np.asarray(self.color, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        if color.ndim != 3 or color.shape[2] != 3:
            raise InvalidArgumentError(f"color must be H x W x 3, got {color.shape}")
        if depth.shape != color.shape[:2]:
            raise InvalidArgumentError(f"depth shape {depth.shape} does not match color {color.shape[:2]}")
        if not (np.all(np.isfinite(color)) and np.all(np.isfinite(depth))):
            raise InvalidArgumentError("color and depth must be finite")
        if np.any(depth < 0):
            raise InvalidArgumentError("depth must be >= 0")
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    source_view: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        src = np.asarray(self.source_view, dtype=np.int64).reshape(-1)
        if not (len(pos) == len(col) == len(src)):
            raise InvalidArgumentError(f"mismatched cloud arrays: {len(pos)}, {len(col)}, {len(src)}")
        if not np.all(np.isfinite(pos)):
            raise InvalidArgumentError("point positions must be finite")
        for name, arr in (("positions", pos), ("colors", col), ("source_view", src)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class RenderResult:
    color: np.ndarray  # H x W x 3, zero off-mask
    mask: np.ndarray  # H x W bool occupancy
    depth_buffer: np.ndarray  # H x W, camera-frame depth of the winning point, 0 off-mask
    index: np.ndarray  # H x W, index of the winning point, -1 off-mask

    @property
    def hole_fraction(self) -> float:
        return float(1.0 - self.mask.mean())


def pixel_rays(camera: PinholeCamera) -> np.ndarray:
    """Camera-frame points at unit depth for every pixel centre, H x W x 3."""
    v, u = np.mgrid[0 : camera.height, 0 : camera.width].astype(np.float64)
    return np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)


def _check_raster(shape, camera: PinholeCamera):
    if tuple(shape[:2]) != (camera.height, camera.width):
        raise InvalidArgumentError(f"raster {shape[1]}x{shape[0]} does not match camera {camera.width}x{camera.height}")


def lift(
    frame: RgbdFrame,
    camera: PinholeCamera,
    pose: CameraPose,
    source_view: int = 0,
    mask: Optional[np.ndarray] = None,
) -> PointCloud:
    """Back-project every valid-depth pixel (optionally restricted to ``mask``) into world space."""
    _check_raster(frame.shape, camera)
    select = frame.valid if mask is None else (frame.valid & np.asarray(mask, dtype=bool))
    if not select.any():
        raise EmptyCloudError("no valid depth pixels to lift")
    v, u = np.nonzero(select)
    d = frame.depth[v, u]
    cam = np.stack([(u - camera.cx) * d / camera.fx, (v - camera.cy) * d / camera.fy, d], axis=-1)
    return PointCloud(pose.to_world(cam), frame.color[v, u], np.full(len(d), source_view, dtype=np.int64))


def render(cloud: PointCloud, camera: PinholeCamera, pose: CameraPose, z_near: float = Z_NEAR) -> RenderResult:
    """Splat each point onto its nearest pixel; the nearest depth wins, ties go to the lower index."""
    H, W = camera.height, camera.width
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    index = np.full((H, W), -1, dtype=np.int64)
    if len(cloud):
        cam = pose.to_camera(cloud.positions)
        z = cam[:, 2]
        idx = np.nonzero(z > z_near)[0]
        cam, z = cam[idx], z[idx]
        u = np.rint(camera.fx * cam[:, 0] / z + camera.cx)
        v = np.rint(camera.fy * cam[:, 1] / z + camera.cy)
        inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
        idx, z = idx[inside], z[inside]
        pix = v[inside].astype(np.int64) * W + u[inside].astype(np.int64)
        order = np.lexsort((idx, z, pix))
        pix, z, idx = pix[order], z[order], idx[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, z, idx = pix[first], z[first], idx[first]
        color.reshape(-1, 3)[pix] = cloud.colors[idx]
        depth.reshape(-1)[pix] = z
        index.reshape(-1)[pix] = idx
    return RenderResult(color, index >= 0, depth, index)


def merge(cloud: PointCloud, additions: PointCloud) -> PointCloud:
    if not len(additions):
        return cloud
    if not len(cloud):
        return additions
    return PointCloud(
        np.concatenate([cloud.positions, additions.positions]),
        np.concatenate([cloud.colors, additions.colors]),
        np.concatenate([cloud.source_view, additions.source_view]),
    )


# -- hole filling -------------------------------------------------------------


def _call_with_supported(fn: Callable, *args, **optional):
    """Call ``fn`` passing only the optional keywords its signature accepts."""
    try:
        params = inspect.signature(fn).parameters
    except (TypeError, ValueError):
        return fn(*args)
    if any(p.kind is inspect.Parameter.VAR_KEYWORD for p in params.values()):
        return fn(*args, **optional)
    return fn(*args, **{k: v for k, v in optional.items() if k in params})


def constant_filler(value: float = 0.5) -> Filler:
    def fill(color, known, prompt=None):
        out = np.array(color, dtype=np.float64, copy=True)
        out[~known] = value
        return out

    return fill


def diffusion_filler(tol: float = 1e-6, max_iter: int = 10_000) -> Filler:
    """Holes start at their nearest known value, then relax by 4-neighbour averaging."""

    def fill(color, known, prompt=None):
        out = np.array(color, dtype=np.float64, copy=True)
        known = np.asarray(known, dtype=bool)
        holes = ~known
        if not holes.any():
            return out
        if not known.any():
            out[:] = 0.5
            return out
        _, (iy, ix) = ndimage.distance_transform_edt(holes, return_indices=True)
        out[holes] = color[iy[holes], ix[holes]]
        # neighbour counts with clamped borders
        ones = np.ones(known.shape)
        count = np.zeros(known.shape)
        count[1:] += ones[:-1]
        count[:-1] += ones[1:]
        count[:, 1:] += ones[:, :-1]
        count[:, :-1] += ones[:, 1:]
        count = count[..., None]
        hv = np.nonzero(holes)
        for _ in range(max_iter):
            acc = np.zeros_like(out)
            acc[1:] += out[:-1]
            acc[:-1] += out[1:]
            acc[:, 1:] += out[:, :-1]
            acc[:, :-1] += out[:, 1:]
            new = (acc / count)[hv]
            delta = np.max(np.abs(new - out[hv]))
            out[hv] = new
            if delta < tol:
                break
        return out

    return fill


BUILTIN_FILLERS = {"constant": constant_filler, "diffuse": diffusion_filler}


def fill_holes(
    r: RenderResult,
    filler: Filler,
    prompt: Optional[str] = None,
    *,
    pose: Optional[CameraPose] = None,
    view_index: Optional[int] = None,
) -> np.ndarray:
    """Run ``filler`` on a render and re-impose every known pixel afterwards."""
    try:
        out = _call_with_supported(filler, r.color, r.mask, prompt, pose=pose)
        out = np.asarray(out, dtype=np.float64)
        if out.shape != r.color.shape:
            raise InvalidArgumentError(f"filler returned shape {out.shape}, expected {r.color.shape}")
    except Exception as exc:
        if view_index is None:
            raise
        raise StageError("fill", view_index, exc) from exc
    out = out.copy()
    out[r.mask] = r.color[r.mask]
    return out


def extend_rendered_depth(color, pose=None, render: Optional[RenderResult] = None) -> np.ndarray:
    """Fallback depth provider: the rendered depth buffer, extended into holes by nearest valid value."""
    if render is None or not render.mask.any():
        raise InvalidArgumentError("extend_rendered_depth needs a render with at least one known pixel")
    depth = render.depth_buffer.copy()
    holes = ~render.mask
    if holes.any():
        _, (iy, ix) = ndimage.distance_transform_edt(holes, return_indices=True)
        depth[holes] = depth[iy[holes], ix[holes]]
    return depth


# -- depth coefficient -------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, a: float, b: float, tol: float) -> float:
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimize_depth_scale(
    candidate: RgbdFrame,
    hole_mask: np.ndarray,
    camera: PinholeCamera,
    pose: CameraPose,
    reference: PointCloud,
    *,
    bounds: tuple[float, float] = (0.25, 4.0),
    grid: int = 64,
    rtol: float = 1e-4,
    z_near: float = Z_NEAR,
) -> float:
    """Scalar ``d`` minimising the l1 gap between the lifted candidate and the cloud.

    The overlap set is every non-hole pixel that the existing cloud covers when
    rendered at ``pose``; each such pixel pairs the candidate point lifted along
    its ray with the cloud point that won the pixel's z-buffer. The search runs
    on ``log d``: a coarse grid, then golden-section refinement.
    """
    _check_raster(candidate.shape, camera)
    r = render(reference, camera, pose, z_near)
    overlap = r.mask & ~np.asarray(hole_mask, dtype=bool) & candidate.valid
    if not overlap.any():
        raise NoOverlapError("candidate view has no overlap with the existing cloud")
    rays = pixel_rays(camera)[overlap] * candidate.depth[overlap][:, None]
    # world point for scale d is d*A + B
    A = rays @ pose.rotation
    B = -pose.translation @ pose.rotation
    target = reference.positions[r.index[overlap]] - B

    def loss(log_d: float) -> float:
        return float(np.abs(math.exp(log_d) * A - target).sum())

    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    xs = np.linspace(lo, hi, grid)
    k = int(np.argmin([loss(x) for x in xs]))
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
    # an interval of width w in log d is a relative tolerance of about w in d
    return math.exp(_golden_section(loss, a, b, math.log1p(rtol)))


# -- Stage I -----------------------------------------------------------------


@dataclass
class StageOneResult:
    frames: list[np.ndarray]
    renders: list[RenderResult]  # pre-fill renders; frame 0 renders the initial cloud
    depth_scales: list[float]
    hole_fractions: list[float]
    cloud_sizes: list[int]
    cloud: PointCloud
    warnings: list[str] = field(default_factory=list)


def stage_one(
    frame: RgbdFrame,
    trajectory: Trajectory,
    camera: PinholeCamera,
    filler: Filler,
    depth_provider: DepthProvider,
    prompt: Optional[str] = None,
    z_near: float = Z_NEAR,
) -> StageOneResult:
    """Render the input along ``trajectory``, growing the cloud from each view's holes.

    ``filler(color, known, prompt[, pose])`` completes holes;
    ``depth_provider(color[, pose][, render])`` supplies depth for the completed
    view. Optional arguments are passed when the callable's signature accepts them.
    """
    cloud = lift(frame, camera, trajectory[0], source_view=0)
    frames = [frame.color.copy()]
    renders = [render(cloud, camera, trajectory[0], z_near)]
    scales = [1.0]
    holes0 = renders[0].hole_fraction
    fractions = [holes0]
    sizes = [len(cloud)]
    warnings: list[str] = []

    for i in range(1, len(trajectory)):
        pose = trajectory[i]
        pre = render(cloud, camera, pose, z_near)
        filled = fill_holes(pre, filler, prompt, pose=pose, view_index=i)
        holes = ~pre.mask
        d = 1.0
        if holes.any():
            try:
                depth = np.asarray(_call_with_supported(depth_provider, filled, pose=pose, render=pre), dtype=np.float64)
                candidate = RgbdFrame(filled, depth)
            except Exception as exc:
                raise StageError("depth", i, exc) from exc
            try:
                d = optimize_depth_scale(candidate, holes, camera, pose, cloud, z_near=z_near)
            except NoOverlapError:
                msg = f"view {i}: no overlap with existing cloud, using depth coefficient 1"
                logger.warning(msg)
                warnings.append(msg)
            scaled = RgbdFrame(filled, d * depth)
            if (scaled.valid & holes).any():
                cloud = merge(cloud, lift(scaled, camera, pose, source_view=i, mask=holes))
        post = render(cloud, camera, pose, z_near)
        frames.append(np.where(post.mask[..., None], post.color, filled))
        renders.append(pre)
        scales.append(d)
        fractions.append(pre.hole_fraction)
        sizes.append(len(cloud))

    return StageOneResult(frames, renders, scales, fractions, sizes, cloud, warnings)

"""Pinhole cameras, rigid world-to-camera poses and trajectory construction.

Axis convention: +x right, +y down, +z forward. A pose maps world points into
the camera frame, ``x_cam = R @ x_world + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidDepthError, InvalidPoseError, MissingParameterError

ORTHO_TOL = 1e-9
EXTRINSICS_TOL = 1e-6
DEFAULT_VFOV_DEG = 55.0


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(f"raster size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError(f"principal point ({self.cx}, {self.cy}) outside raster")

    @classmethod
    def default(cls, width: int, height: int, vfov_deg: float = DEFAULT_VFOV_DEG) -> "PinholeCamera":
        """Square pixels, principal point at the raster centre (pixel centres are integers)."""
        f = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _ortho_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def nearest_rotation(R: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise InvalidPoseError(f"expected 3x3 rotation and 3-vector, got {R.shape} and {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidPoseError("pose contains non-finite values")
        err = _ortho_error(R)
        if err > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidPoseError(f"rotation is not in SO(3) (orthonormality error {err:.3g})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    @property
    def matrix3x4(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def inverse(self) -> "CameraPose":
        Rt = self.rotation.T
        return CameraPose(Rt, -Rt @ self.translation)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    def allclose(self, other: "CameraPose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        return f"CameraPose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Apply ``b`` after ``a``: ``R = R_b R_a``, ``t = R_b t_a + t_b``."""
    return CameraPose(b.rotation @ a.rotation, b.rotation @ a.translation + b.translation)


def rot_x(angle: float) -> np.ndarray:
    # positive angle tilts the optical axis towards -y (up)
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rot_y(angle: float) -> np.ndarray:
    # positive angle turns the optical axis towards +x (right)
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    # positive angle rolls the camera's right axis towards +y (clockwise seen from behind)
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[CameraPose, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise InvalidArgumentError("a trajectory needs at least one pose")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self) -> Iterator[CameraPose]:
        return iter(self.poses)

    def __getitem__(self, i) -> CameraPose:
        return self.poses[i]

    @classmethod
    def identity(cls, frames: int) -> "Trajectory":
        if frames < 1:
            raise InvalidArgumentError(f"frames must be >= 1, got {frames}")
        return cls(tuple(CameraPose.identity() for _ in range(frames)))

    def matrices(self) -> list[np.ndarray]:
        return [p.matrix3x4 for p in self.poses]


MOTION_DIRECTIONS = {
    "zoom": {"in": 1.0, "out": -1.0},
    "tilt": {"up": 1.0, "down": -1.0},
    "pan": {"right": 1.0, "left": -1.0},
    "pedestal": {"up": 1.0, "down": -1.0},
    "truck": {"right": 1.0, "left": -1.0},
    "roll": {"clockwise": 1.0, "anticlockwise": -1.0},
    "rotate": {"clockwise": 1.0, "anticlockwise": -1.0},
}
ANGULAR_KINDS = frozenset({"tilt", "pan", "roll", "rotate"})


@dataclass(frozen=True)
class MotionPrimitive:
    """One basic camera move.

    ``magnitude`` is the total displacement reached on the last frame, in world
    length units for zoom/pedestal/truck and degrees for tilt/pan/roll/rotate.
    """

    kind: str
    direction: str
    magnitude: float
    frames: int

    def __post_init__(self):
        if self.kind not in MOTION_DIRECTIONS:
            raise InvalidArgumentError(f"unknown motion kind {self.kind!r}")
        if self.direction not in MOTION_DIRECTIONS[self.kind]:
            allowed = ", ".join(MOTION_DIRECTIONS[self.kind])
            raise InvalidArgumentError(f"{self.kind} direction must be one of {allowed}, got {self.direction!r}")
        if not (self.magnitude >= 0 and math.isfinite(self.magnitude)):
            raise InvalidArgumentError(f"magnitude must be finite and >= 0, got {self.magnitude}")
        if self.frames < 1:
            raise InvalidArgumentError(f"frames must be >= 1, got {self.frames}")

    @property
    def sign(self) -> float:
        return MOTION_DIRECTIONS[self.kind][self.direction]


def _primitive_pose(kind: str, amount: float, focus_distance: float | None) -> CameraPose:
    # amount is signed; radians for angular kinds
    if kind == "tilt":
        return CameraPose(rot_x(amount))
    if kind == "pan":
        return CameraPose(rot_y(amount))
    if kind == "roll":
        return CameraPose(rot_z(amount))
    if kind == "rotate":
        f = focus_distance
        return CameraPose(rot_y(amount), [f * math.sin(amount), 0.0, f - f * math.cos(amount)])
    # translations describe where the camera centre moves; t = -centre
    if kind == "zoom":
        centre = (0.0, 0.0, amount)
    elif kind == "truck":
        centre = (amount, 0.0, 0.0)
    else:  # pedestal, up is -y
        centre = (0.0, -amount, 0.0)
    return CameraPose(np.eye(3), -np.asarray(centre))


def build_primitive(p: MotionPrimitive, focus_distance: float | None = None) -> Trajectory:
    """Linearly interpolate a primitive from identity (frame 0) to its full magnitude."""
    if p.frames < 1:
        raise InvalidArgumentError(f"frames must be >= 1, got {p.frames}")
    if p.kind == "rotate":
        if focus_distance is None:
            raise MissingParameterError("rotate requires a focus_distance")
        if not (focus_distance > 0 and math.isfinite(focus_distance)):
            raise InvalidArgumentError(f"focus_distance must be positive, got {focus_distance}")
    total = p.sign * (math.radians(p.magnitude) if p.kind in ANGULAR_KINDS else p.magnitude)
    if p.frames == 1:
        return Trajectory((CameraPose.identity(),))
    poses = []
    for i in range(p.frames):
        if i == 0:
            poses.append(CameraPose.identity())
            continue
        amount = total * i / (p.frames - 1)
        poses.append(_primitive_pose(p.kind, amount, focus_distance))
    return Trajectory(tuple(poses))


def combine(parts: Sequence[Trajectory], mode: str = "simultaneous") -> Trajectory:
    """Combine trajectories frame-wise (``simultaneous``) or end to end (``sequential``).

    Simultaneous mode composes the i-th poses in list order. Sequential mode
    re-anchors each part on the last pose reached so far and drops its first
    pose, so the junction frame is not duplicated.
    """
    parts = list(parts)
    if not parts:
        raise InvalidArgumentError("combine needs at least one trajectory")
    if mode == "simultaneous":
        n = len(parts[0])
        if any(len(p) != n for p in parts):
            raise InvalidArgumentError(f"simultaneous parts must share a length, got {[len(p) for p in parts]}")
        poses = []
        for i in range(n):
            pose = parts[0][i]
            for part in parts[1:]:
                pose = compose(pose, part[i])
            poses.append(pose)
        return Trajectory(tuple(poses))
    if mode == "sequential":
        poses = list(parts[0].poses)
        for part in parts[1:]:
            anchor = poses[-1]
            poses.extend(compose(anchor, q) for q in part.poses[1:])
        return Trajectory(tuple(poses))
    raise InvalidArgumentError(f"mode must be 'simultaneous' or 'sequential', got {mode!r}")


def from_extrinsics(matrices: Iterable) -> Trajectory:
    """Build a trajectory from 3x4 / 4x4 world-to-camera matrices (or flat 12/16 lists).

    Rotation blocks that are already orthonormal to machine precision are kept
    verbatim; those within 1e-6 are snapped to the nearest rotation.
    """
    poses = []
    for i, m in enumerate(matrices):
        m = np.asarray(m, dtype=np.float64)
        if m.ndim == 1 and m.size in (12, 16):
            m = m.reshape(-1, 4)
        if m.shape not in ((3, 4), (4, 4)):
            raise InvalidPoseError(f"expected a 3x4 or 4x4 matrix, got shape {m.shape}", i)
        if not np.all(np.isfinite(m)):
            raise InvalidPoseError("matrix contains non-finite values", i)
        R, t = m[:3, :3], m[:3, 3]
        err = _ortho_error(R)
        if err > EXTRINSICS_TOL or np.linalg.det(R) <= 0:
            raise InvalidPoseError(f"rotation block not orthonormal (error {err:.3g})", i)
        if err > 1e-12 or abs(np.linalg.det(R) - 1.0) > 1e-12:
            R = nearest_rotation(R)
        poses.append(CameraPose(R, t))
    if not poses:
        raise InvalidArgumentError("no extrinsic matrices given")
    return Trajectory(tuple(poses))


def estimate_focus_distance(depth: np.ndarray, patch_half_width: int = 10) -> float:
    """Mean depth over the (2h+1)^2 patch centred on the raster midpoint."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise InvalidArgumentError(f"depth must be 2-D, got shape {depth.shape}")
    h = int(patch_half_width)
    if h < 0:
        raise InvalidArgumentError(f"patch_half_width must be >= 0, got {h}")
    H, W = depth.shape
    y0, x0 = H // 2, W // 2
    if y0 - h < 0 or x0 - h < 0 or y0 + h >= H or x0 + h >= W:
        raise InvalidArgumentError(f"patch of half width {h} does not fit a {W}x{H} raster")
    patch = depth[y0 - h : y0 + h + 1, x0 - h : x0 + h + 1]
    if not np.all(np.isfinite(patch)) or np.any(patch <= 0):
        raise InvalidDepthError("depth must be positive on the centre patch")
    return float(patch.mean())

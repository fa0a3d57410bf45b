"""Camera-motion accuracy: similarity alignment, ATE and RPE over pose tracks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegeneracyError, InvalidArgumentError
from .geometry import CameraPose, Trajectory


@dataclass(frozen=True)
class PoseTrack:
    poses: tuple[CameraPose, ...]
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(self.poses) != len(self.indices):
            raise InvalidArgumentError("poses and frame indices differ in length")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise InvalidArgumentError("frame indices must be strictly increasing")

    @classmethod
    def of(cls, poses: Iterable[CameraPose] | Trajectory, indices: Sequence[int] | None = None) -> "PoseTrack":
        poses = tuple(poses)
        return cls(poses, tuple(range(len(poses))) if indices is None else tuple(indices))

    def __len__(self) -> int:
        return len(self.poses)

    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.poses]).reshape(-1, 3)


@dataclass(frozen=True)
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def _track(x) -> PoseTrack:
    return x if isinstance(x, PoseTrack) else PoseTrack.of(x)


def _paired(estimate, reference, minimum: int) -> tuple[PoseTrack, PoseTrack]:
    est, ref = _track(estimate), _track(reference)
    if len(est) != len(ref):
        raise InvalidArgumentError(f"track lengths differ: {len(est)} vs {len(ref)}")
    if len(est) < minimum:
        raise DegeneracyError(f"need at least {minimum} poses, got {len(est)}")
    return est, ref


def umeyama_align(estimate, reference, with_scale: bool = True) -> Similarity:
    """Least-squares similarity taking estimated camera centres onto the reference ones."""
    est, ref = _paired(estimate, reference, 3)
    src, dst = est.centers(), ref.centers()
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = float((xs**2).sum(axis=1).mean())
    if var_s <= 1e-24 or float((xd**2).sum(axis=1).mean()) <= 1e-24:
        raise DegeneracyError("camera centres are all identical")
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    s = float((D * S).sum() / var_s) if with_scale else 1.0
    return Similarity(s, R, mu_d - s * R @ mu_s)


def ate(estimate, reference, with_scale: bool = True) -> float:
    """RMS of camera-centre residuals after similarity alignment."""
    est, ref = _paired(estimate, reference, 3)
    sim = umeyama_align(est, ref, with_scale)
    residual = sim.apply(est.centers()) - ref.centers()
    return float(math.sqrt((residual**2).sum(axis=1).mean()))


def rotation_angle(R: np.ndarray) -> float:
    """Angle of a rotation matrix in [0, pi]; atan2 form keeps precision near zero."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(math.atan2(np.linalg.norm(axis) / 2.0, cos))


def _cam_to_world(p: CameraPose) -> np.ndarray:
    return p.inverse().matrix


def _relative(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a^-1 b for rigid 4x4 transforms
    inv = np.eye(4)
    inv[:3, :3] = a[:3, :3].T
    inv[:3, 3] = -a[:3, :3].T @ a[:3, 3]
    return inv @ b


def rpe(estimate, reference, delta: int = 1) -> tuple[float, float]:
    """RMS translation and rotation (radians) error of ``delta``-frame relative motions."""
    est, ref = _paired(estimate, reference, 1)
    if not 1 <= delta < len(est):
        raise InvalidArgumentError(f"delta must be within 1..{len(est) - 1}, got {delta}")
    P = [_cam_to_world(p) for p in est.poses]
    Q = [_cam_to_world(q) for q in ref.poses]
    trans, rots = [], []
    for i in range(len(P) - delta):
        E = _relative(_relative(Q[i], Q[i + delta]), _relative(P[i], P[i + delta]))
        trans.append(float(np.linalg.norm(E[:3, 3])))
        rots.append(rotation_angle(E[:3, :3]))
    trans, rots = np.array(trans), np.array(rots)
    return float(math.sqrt((trans**2).mean())), float(math.sqrt((rots**2).mean()))


def evaluate(estimate, reference, delta: int = 1, with_scale: bool = True) -> dict:
    est, ref = _paired(estimate, reference, 3)
    rpe_t, rpe_r = rpe(est, ref, delta)
    return {
        "ate": ate(est, ref, with_scale),
        "rpe_t": rpe_t,
        "rpe_r": rpe_r,
        "n": len(est),
        "delta": delta,
        "with_scale": with_scale,
    }

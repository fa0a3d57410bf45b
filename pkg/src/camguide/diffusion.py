"""Noise schedules, forward inversion of a frame stack and DDIM-style generation.

Latents are N x C x H x W arrays. Timestep 0 is the clean signal
(``alpha_bar[0] == 1``); the sampling ladder is ``(0, *sampling_steps)`` and
positions on it are what callers pass as ``t0_index``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, ScheduleError, StageError

RNG_ALGORITHM = "numpy.PCG64"
NOISE_MODES = ("independent", "shared")

Denoiser = Callable[[np.ndarray, int], np.ndarray]


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray  # length T + 1
    sampling_steps: tuple[int, ...]
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "sampling_steps", tuple(int(s) for s in self.sampling_steps))
        if ab.shape != (self.T + 1,) or ab[0] != 1.0:
            raise ScheduleError("alpha_bar must have T + 1 entries starting at 1")
        if np.any(np.diff(ab) >= 0) or np.any(ab <= 0):
            raise ScheduleError("alpha_bar must be strictly decreasing inside (0, 1]")
        steps = self.sampling_steps
        if not steps or any(b <= a for a, b in zip(steps, steps[1:])) or steps[0] < 1 or steps[-1] > self.T:
            raise ScheduleError(f"sampling steps must be strictly increasing within 1..{self.T}")

    @property
    def ladder(self) -> tuple[int, ...]:
        return (0,) + self.sampling_steps

    def timestep(self, index: int) -> int:
        if not 0 <= index <= len(self.sampling_steps):
            raise InvalidArgumentError(f"t0_index {index} outside 0..{len(self.sampling_steps)}")
        return self.ladder[index]

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sampling_steps": list(self.sampling_steps),
        }


def make_schedule(kind: str = "linear", T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise InvalidArgumentError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), T) ** 2
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T, alpha_bar, tuple(range(1, T + 1)), kind, beta_start, beta_end)


def select_sampling_steps(schedule: NoiseSchedule, count: int = 25) -> NoiseSchedule:
    """Evenly spaced sub-ladder of ``count`` steps that always ends at ``T``."""
    if not 1 <= count <= schedule.T:
        raise InvalidArgumentError(f"count must be within 1..{schedule.T}, got {count}")
    raw = np.linspace(schedule.T, 1, count)[::-1]
    steps = np.unique(np.floor(raw + 0.5).astype(np.int64))
    return replace(schedule, sampling_steps=tuple(steps.tolist()))


@dataclass(frozen=True, eq=False)
class LatentSequence:
    data: np.ndarray  # N x C x H x W
    timestep: int = 0
    noise: Optional[np.ndarray] = field(default=None, repr=False)  # forward noise, when known

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4 or data.shape[0] < 1:
            raise InvalidArgumentError(f"latents must be N x C x H x W with N >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("latents must be finite")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def draw_noise(rng: np.random.Generator, shape, noise_mode: str = "independent", dtype=np.float64) -> np.ndarray:
    if noise_mode == "independent":
        eps = rng.standard_normal(shape)
    elif noise_mode == "shared":
        eps = np.broadcast_to(rng.standard_normal(shape[1:]), shape).copy()
    else:
        raise InvalidArgumentError(f"noise_mode must be one of {NOISE_MODES}, got {noise_mode!r}")
    return eps.astype(dtype, copy=False)


def invert(
    V0: LatentSequence,
    t0_index: int,
    schedule: NoiseSchedule,
    seed=0,
    noise_mode: str = "independent",
) -> LatentSequence:
    """Jump straight to ``sqrt(ab) * V0 + sqrt(1 - ab) * eps`` at the ladder position ``t0_index``."""
    t0 = schedule.timestep(t0_index)
    data = V0.data
    eps = draw_noise(make_rng(seed), data.shape, noise_mode, data.dtype)
    ab = schedule.alpha_bar[t0]
    if t0 == 0:
        return LatentSequence(data.copy(), 0, eps)
    out = math.sqrt(ab) * data + math.sqrt(1.0 - ab) * eps
    return LatentSequence(out.astype(data.dtype, copy=False), t0, eps)


def ddim_sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    ab_t, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t_prev]
    return eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)


def generation_step(
    V_t: LatentSequence,
    t: int,
    t_prev: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    eta: float = 1.0,
    seed=0,
    noise_mode: str = "independent",
) -> LatentSequence:
    """One DDIM update from ``t`` to ``t_prev``; ``eta=0`` is deterministic, ``eta=1`` matches the posterior variance."""
    if not t > t_prev >= 0:
        raise InvalidArgumentError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if eta < 0:
        raise InvalidArgumentError(f"eta must be >= 0, got {eta}")
    x = V_t.data
    eps_hat = np.asarray(eps_hat)
    if eps_hat.shape != x.shape:
        raise InvalidArgumentError(f"noise prediction shape {eps_hat.shape} does not match latents {x.shape}")
    ab_t, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t_prev]
    sigma = ddim_sigma(schedule, t, t_prev, eta)
    dir_var = 1.0 - ab_prev - sigma**2
    if dir_var < 0:
        if dir_var < -1e-12:
            raise ScheduleError(f"sigma_t^2 = {sigma**2:.6g} exceeds 1 - alpha_bar[{t_prev}] = {1 - ab_prev:.6g}")
        dir_var = 0.0
    x0_hat = (x - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(dir_var) * eps_hat
    if sigma > 0:
        out = out + sigma * draw_noise(make_rng(seed), x.shape, noise_mode, x.dtype)
    return LatentSequence(out.astype(x.dtype, copy=False), t_prev)


def generate(
    V_t0: LatentSequence,
    t0_index: int,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    eta: float = 1.0,
    seed=0,
    noise_mode: str = "independent",
    on_step: Optional[Callable[[LatentSequence], None]] = None,
) -> LatentSequence:
    """Walk the ladder down from ``t0_index`` to 0, one denoiser call per step.

    ``denoiser(latents, t)`` receives the raw array. The result is clamped to [-1, 1].
    """
    t0 = schedule.timestep(t0_index)
    if V_t0.timestep != t0:
        raise InvalidArgumentError(f"latents live at t={V_t0.timestep}, expected t={t0}")
    if t0_index == 0:
        return V_t0
    rng = make_rng(seed)
    ladder = schedule.ladder
    V = V_t0
    for k in range(t0_index, 0, -1):
        t, t_prev = ladder[k], ladder[k - 1]
        try:
            eps_hat = denoiser(V.data, t)
        except Exception as exc:
            raise StageError("denoise", t, exc) from exc
        V = generation_step(V, t, t_prev, eps_hat, schedule, eta, rng, noise_mode)
        if on_step is not None:
            on_step(V)
    return LatentSequence(np.clip(V.data, -1.0, 1.0), 0)


def temporal_smooth(x: np.ndarray) -> np.ndarray:
    """(1/4, 1/2, 1/4) average over neighbouring frames, ends clamped."""
    prev = np.concatenate([x[:1], x[:-1]])
    nxt = np.concatenate([x[1:], x[-1:]])
    return 0.25 * prev + 0.5 * x + 0.25 * nxt


def smoothing_denoiser(V_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Stand-in noise predictor whose clean estimate is a blurred copy of the rescaled latent."""
    if not 1 <= t <= schedule.T:
        raise InvalidArgumentError(f"t must be within 1..{schedule.T}, got {t}")
    x = np.asarray(V_t)
    ab = schedule.alpha_bar[t]
    scaled = x / math.sqrt(ab)
    blurred = ndimage.uniform_filter(scaled, size=(1, 1, 3, 3), mode="nearest")
    return (x - math.sqrt(ab) * temporal_smooth(blurred)) / math.sqrt(1.0 - ab)


def oracle_denoiser(noise: np.ndarray) -> Denoiser:
    """Always predicts the stored forward noise; reconstructs exactly when eta = 0."""

    def predict(V_t, t):
        return noise

    return predict

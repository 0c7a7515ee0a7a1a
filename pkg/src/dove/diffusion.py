"""Noise schedule tables and the one-step v-prediction denoise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2
DEFAULT_T_STAR = 399


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables indexed from ``t = 1`` (stored at array index ``t - 1``)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("betas must be a non-empty 1-d sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        return cls(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` over ``T`` steps."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))


def check_timestep(schedule: NoiseSchedule, t: int) -> int:
    if int(t) != t or not 1 <= t <= schedule.T:
        raise IndexError(f"timestep {t} outside [1, {schedule.T}]")
    return int(t)


def alpha_bar(schedule: NoiseSchedule, t: int) -> float:
    return float(schedule.alpha_bars[check_timestep(schedule, t) - 1])


def one_step_denoise(z_lr, v, schedule: NoiseSchedule, t: int = DEFAULT_T_STAR):
    """Clean-latent estimate ``sqrt(ab) * z_lr - sqrt(1 - ab) * v``.

    ``z_lr`` is taken as the noised latent at step ``t`` as-is; no noise is
    added. Works on numpy arrays and torch tensors alike.
    """
    if tuple(z_lr.shape) != tuple(v.shape):
        raise ShapeError(f"latent {tuple(z_lr.shape)} and prediction {tuple(v.shape)} differ")
    ab = alpha_bar(schedule, t)
    return math.sqrt(ab) * z_lr - math.sqrt(1.0 - ab) * v

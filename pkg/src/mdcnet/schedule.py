"""Noise schedules and closed-form forward/reverse diffusion steps.

All tables are float64 numpy arrays indexed by step ``t`` in ``[0, T)``.
Functions accept numpy arrays or torch tensors for the data arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ConfigError

SCHEDULE_KINDS = ("cosine", "linear", "sigmoid", "sqrt")
BETA_START = 1e-4
BETA_END = 0.02
MAX_BETA = 0.999


def _betas_from_alpha_bar(alpha_bar, T: int) -> np.ndarray:
    t = np.arange(T + 1, dtype=np.float64) / T
    ab = alpha_bar(t)
    betas = 1.0 - ab[1:] / ab[:-1]
    return np.clip(betas, 0.0, MAX_BETA)


def _cosine_alpha_bar(t, s=0.008):
    return np.cos((t + s) / (1 + s) * math.pi / 2) ** 2


def _sqrt_alpha_bar(t):
    return 1.0 - np.sqrt(t + 1e-4)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: str
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def posterior_variance(self, t: int) -> float:
        if t == 0:
            return 0.0
        return float(self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]))

    def check_step(self, t: int) -> int:
        if not 0 <= int(t) < self.T:
            raise BoundsError(f"diffusion step {t} outside [0, {self.T})")
        return int(t)


def make_schedule(kind: str = "cosine", T: int = 1000) -> NoiseSchedule:
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if int(T) < 1:
        raise BoundsError(f"schedule needs T >= 1, got {T}")
    T = int(T)
    if kind == "linear":
        betas = np.linspace(BETA_START, BETA_END, T)
    elif kind == "sigmoid":
        ramp = 1.0 / (1.0 + np.exp(-np.linspace(-6.0, 6.0, T)))
        betas = BETA_START + (BETA_END - BETA_START) * ramp
    elif kind == "cosine":
        betas = _betas_from_alpha_bar(_cosine_alpha_bar, T)
    else:
        # alpha_bar goes negative near t=T; the MAX_BETA clip keeps the last steps valid
        t = np.arange(T + 1, dtype=np.float64) / T
        ab = _sqrt_alpha_bar(t)
        betas = np.empty(T)
        for i in range(T):
            betas[i] = MAX_BETA if ab[i + 1] <= 0 else min(1.0 - ab[i + 1] / ab[i], MAX_BETA)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(kind, T, betas, alphas, alpha_bars)


def q_sample(schedule: NoiseSchedule, x0, t: int, eps):
    """Closed-form draw of x_t given x_0 and unit Gaussian noise ``eps``."""
    t = schedule.check_step(t)
    ab = float(schedule.alpha_bars[t])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def predict_x0(schedule: NoiseSchedule, x_t, eps, t: int):
    ab = float(schedule.alpha_bars[schedule.check_step(t)])
    return (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def posterior_mean(schedule: NoiseSchedule, x_t, predicted_eps, t: int):
    t = schedule.check_step(t)
    beta = float(schedule.betas[t])
    ab = float(schedule.alpha_bars[t])
    return (x_t - beta / math.sqrt(1.0 - ab) * predicted_eps) / math.sqrt(1.0 - beta)


def posterior_step(schedule: NoiseSchedule, x_t, predicted_eps, t: int, z=None):
    """One ancestral step x_t -> x_{t-1}; ``z`` is ignored at t=0."""
    mean = posterior_mean(schedule, x_t, predicted_eps, t)
    if t == 0 or z is None:
        return mean
    return mean + math.sqrt(schedule.posterior_variance(t)) * z

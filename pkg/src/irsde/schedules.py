"""Theta schedules for the mean-reverting SDE.

Each schedule returns an array ``theta[0..T]``; entry ``i`` drives the
transition from step ``i - 1`` to step ``i``.  The time increment is then
chosen so that the cumulative decay at ``T`` equals ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("constant", "linear", "cosine")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "cosine"
    T: int = 100
    s_offset: float = 0.008
    delta: float = 0.005

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.s_offset <= 0.0:
            raise ValueError(f"s_offset must be positive, got {self.s_offset}")


def _cosine_f(t, T, s):
    return np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2


def build_theta(spec: ScheduleSpec) -> np.ndarray:
    """Mean-reversion speeds ``theta[0..T]`` (before time normalization).

    cosine: ``1 - f(t)/f(0)`` with ``f(t) = cos^2(((t/T + s)/(1 + s)) pi/2)``,
    rising from 0 at ``t = 0`` to 1 at ``t = T``.
    linear: affine ramp from 0 to 1.
    constant: ones.
    """
    T = int(spec.T)
    t = np.arange(T + 1, dtype=np.float64)
    if spec.kind == "cosine":
        theta = 1.0 - _cosine_f(t, T, spec.s_offset) / _cosine_f(0.0, T, spec.s_offset)
    elif spec.kind == "linear":
        theta = t / T
    else:
        theta = np.ones(T + 1)
    return theta


def normalize_dt(theta: np.ndarray, delta: float) -> float:
    """Time increment such that ``exp(-sum(theta[1:]) * dt) == delta``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    total = float(np.sum(theta[1:]))
    if total <= 0.0:
        raise ValueError("theta[1:] sums to zero; cannot normalize the time increment")
    return -math.log(delta) / total


def sigma_sq_from_theta(theta: np.ndarray, lambda_sq: float) -> np.ndarray:
    """Diffusion coefficients tied to theta by ``sigma^2 / theta = 2 lambda^2``."""
    if lambda_sq <= 0.0:
        raise ValueError(f"lambda_sq must be positive, got {lambda_sq}")
    return 2.0 * lambda_sq * np.asarray(theta, dtype=np.float64)

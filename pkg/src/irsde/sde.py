"""Forward mean-reverting SDE: closed-form kernels, sampling and exact scores.

States are plain float64 numpy arrays of any shape (a 1-D signal, a
grayscale image, or a stack of either).  The process is

    dx = theta_t (mu - x) dt + sigma_t dw,    sigma_t^2 = 2 lambda^2 theta_t

discretized on the grid ``t_i = i * dt`` with ``theta_bar[i] = sum_{j<=i} theta[j] dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .schedules import ScheduleSpec, build_theta, normalize_dt, sigma_sq_from_theta

DEFAULT_LAMBDA_SQ = (10.0 / 255.0) ** 2


class DegenerateVarianceError(ValueError):
    """Raised when an operation needs ``v_i > 0`` but was given step 0."""


@dataclass(frozen=True)
class SdeConfig:
    lambda_sq: float
    T: int
    delta: float
    schedule: str
    dt: float
    theta: np.ndarray = field(repr=False)
    sigma_sq: np.ndarray = field(repr=False)
    theta_bar: np.ndarray = field(repr=False)
    s_offset: float = 0.008

    @classmethod
    def build(cls, lambda_sq: float = DEFAULT_LAMBDA_SQ, T: int = 100, delta: float = 0.005,
              schedule: str = "cosine", s_offset: float = 0.008) -> "SdeConfig":
        if not lambda_sq > 0.0:
            raise ValueError(f"lambda_sq must be positive, got {lambda_sq}")
        spec = ScheduleSpec(kind=schedule, T=int(T), s_offset=s_offset, delta=delta)
        theta = build_theta(spec)
        dt = normalize_dt(theta, delta)
        theta_bar = np.concatenate([[0.0], np.cumsum(theta[1:] * dt)])
        for arr in (theta, theta_bar):
            arr.setflags(write=False)
        sigma_sq = sigma_sq_from_theta(theta, lambda_sq)
        sigma_sq.setflags(write=False)
        return cls(lambda_sq=float(lambda_sq), T=int(T), delta=float(delta), schedule=schedule,
                   dt=dt, theta=theta, sigma_sq=sigma_sq, theta_bar=theta_bar, s_offset=s_offset)

    @property
    def lam(self) -> float:
        return math.sqrt(self.lambda_sq)

    @property
    def variances(self) -> np.ndarray:
        """Marginal variances ``v_i`` for every grid index."""
        return self.lambda_sq * -np.expm1(-2.0 * self.theta_bar)

    def variance(self, i):
        return self.lambda_sq * -np.expm1(-2.0 * self.theta_bar[i])

    def check_index(self, i, lo: int = 0):
        ii = np.asarray(i)
        if ii.dtype.kind not in "iu":
            raise TypeError(f"step index must be an integer, got {i!r}")
        if np.any(ii < lo) or np.any(ii > self.T):
            raise IndexError(f"step index {i} outside [{lo}, {self.T}]")


@dataclass(frozen=True)
class TransitionStats:
    mean: np.ndarray
    variance: float


@dataclass
class PairedSample:
    x0: np.ndarray
    mu: np.ndarray
    degradation_tag: str = ""
    id: str = ""
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.x0.shape != self.mu.shape:
            raise ValueError(f"x0 shape {self.x0.shape} != mu shape {self.mu.shape}")


def _check_shapes(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ValueError(f"shape mismatch: {shape} vs {np.shape(a)}")


def transition_stats(x_s, s: int, t: int, mu, cfg: SdeConfig) -> TransitionStats:
    """Gaussian kernel p(x_t | x_s): mean ``mu + (x_s - mu) e^{-theta_bar_{s:t}}``,
    variance ``lambda^2 (1 - e^{-2 theta_bar_{s:t}})``."""
    _check_shapes(x_s, mu)
    cfg.check_index(s)
    cfg.check_index(t)
    if s > t:
        raise ValueError(f"transition requires s <= t, got s={s}, t={t}")
    x_s = np.asarray(x_s, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    elapsed = cfg.theta_bar[t] - cfg.theta_bar[s]
    mean = mu + (x_s - mu) * math.exp(-elapsed)
    variance = cfg.lambda_sq * -math.expm1(-2.0 * elapsed)
    return TransitionStats(mean=mean, variance=variance)


def marginal_stats(x0, mu, i: int, cfg: SdeConfig) -> TransitionStats:
    return transition_stats(x0, 0, i, mu, cfg)


def marginal_mean(x0, mu, i, cfg: SdeConfig):
    """Vectorized ``m_i``; ``i`` may be an int or an integer array broadcasting against the states."""
    return mu + (x0 - mu) * np.exp(-cfg.theta_bar[i])


def sample_forward(x0, mu, i: int, cfg: SdeConfig, rng: np.random.Generator):
    """Draw ``x_i = m_i + sqrt(v_i) eps``; returns ``(x_i, eps)``."""
    _check_shapes(x0, mu)
    cfg.check_index(i)
    if np.any(np.asarray(i) < 1):
        raise DegenerateVarianceError("sample_forward requires i >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    x_i = marginal_mean(x0, mu, i, cfg) + np.sqrt(cfg.variance(i)) * eps
    return x_i, eps


def exact_score(x_i, x0, mu, i: int, cfg: SdeConfig) -> np.ndarray:
    """Conditional score ``-(x_i - m_i) / v_i``."""
    _check_shapes(x_i, x0, mu)
    cfg.check_index(i)
    if np.any(np.asarray(i) < 1):
        raise DegenerateVarianceError("score is undefined at i = 0 (zero variance)")
    m = marginal_mean(np.asarray(x0, dtype=np.float64), np.asarray(mu, dtype=np.float64), i, cfg)
    return -(np.asarray(x_i, dtype=np.float64) - m) / cfg.variance(i)


def score_from_noise(eps_hat, i: int, cfg: SdeConfig) -> np.ndarray:
    cfg.check_index(i)
    if np.any(np.asarray(i) < 1):
        raise DegenerateVarianceError("score is undefined at i = 0 (zero variance)")
    return -np.asarray(eps_hat, dtype=np.float64) / np.sqrt(cfg.variance(i))

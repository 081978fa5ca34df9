"""Reverse-time samplers: Euler-Maruyama for the restoration SDE, Euler for the
probability-flow ODE, the closed-form optimal reverse state, and full
restoration loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .metrics import psnr
from .sde import DegenerateVarianceError, SdeConfig, _check_shapes, exact_score, score_from_noise

DIVERGENCE_BOUND = 10.0


class DivergenceError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class StepLog:
    i: int
    score_norm: float
    drift_norm: float
    noise_norm: float
    psnr: float | None = None


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    step_logs: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class ExactScore:
    """Score computed from the known clean state (training-time oracle)."""
    x0: np.ndarray

    def noise(self, x_i, mu, i, cfg):
        v = cfg.variance(i)
        return -self.score(x_i, mu, i, cfg) * math.sqrt(v)

    def score(self, x_i, mu, i, cfg):
        return exact_score(x_i, self.x0, mu, i, cfg)


@dataclass
class LearnedScore:
    """Score from a noise-prediction model: ``model(x_i, mu, i) -> eps_hat``."""
    model: Callable

    def noise(self, x_i, mu, i, cfg):
        eps_hat = self.model(x_i, mu, i)
        if np.shape(eps_hat) != np.shape(x_i):
            raise ValueError(f"model output shape {np.shape(eps_hat)} != state shape {np.shape(x_i)}")
        return eps_hat

    def score(self, x_i, mu, i, cfg):
        return score_from_noise(self.noise(x_i, mu, i, cfg), i, cfg)


def _check_step(i, cfg: SdeConfig):
    cfg.check_index(i)
    if np.any(np.asarray(i) < 1):
        raise IndexError(f"reverse step index must be in [1, {cfg.T}], got {i}")


def reverse_drift(x_i, i, mu, score, cfg: SdeConfig, ode: bool = False):
    """Forward-time drift of the reverse equation, ``theta (mu - x) - c sigma^2 score``
    with ``c = 1`` (SDE) or ``1/2`` (probability-flow ODE)."""
    c = 0.5 if ode else 1.0
    return cfg.theta[i] * (mu - x_i) - c * cfg.sigma_sq[i] * score


def reverse_sde_step(x_i, i: int, mu, score, cfg: SdeConfig, rng: np.random.Generator):
    """One Euler-Maruyama step backwards in time, ``x_i -> x_{i-1}``."""
    _check_shapes(x_i, mu, score)
    _check_step(i, cfg)
    drift = reverse_drift(x_i, i, mu, score, cfg)
    xi = rng.standard_normal(np.shape(x_i))
    return x_i - drift * cfg.dt + math.sqrt(cfg.sigma_sq[i] * cfg.dt) * xi


def reverse_ode_step(x_i, i: int, mu, score, cfg: SdeConfig):
    _check_shapes(x_i, mu, score)
    _check_step(i, cfg)
    return x_i - reverse_drift(x_i, i, mu, score, cfg, ode=True) * cfg.dt


def optimal_reverse_state(x_i, i, x0, mu, cfg: SdeConfig):
    """Posterior mean of ``p(x_{i-1} | x_i, x0)``.

    ``i`` may be an integer array broadcasting against the states (batched use).
    """
    _check_shapes(x_i, x0, mu)
    cfg.check_index(i)
    if np.any(np.asarray(i) < 1):
        raise DegenerateVarianceError("optimal reverse state needs i >= 1")
    tb_prev = cfg.theta_bar[np.asarray(i) - 1]
    tb = cfg.theta_bar[i]
    step = cfg.theta[i] * cfg.dt
    denom = -np.expm1(-2.0 * tb)
    coef_state = -np.expm1(-2.0 * tb_prev) / denom * np.exp(-step)
    coef_clean = -np.expm1(-2.0 * step) / denom * np.exp(-tb_prev)
    return coef_state * (x_i - mu) + coef_clean * (x0 - mu) + mu


def clean_estimate(x_i, mu, i, score, cfg: SdeConfig):
    """Clean state implied by a score: invert ``x_i = m_i + sqrt(v_i) eps``."""
    m_hat = x_i + cfg.variance(i) * score
    return mu + (m_hat - mu) * np.exp(cfg.theta_bar[i])


def terminal_state(mu, cfg: SdeConfig, rng: np.random.Generator):
    """Test-time start: ``mu + sqrt(lambda^2 (1 - delta^2)) xi``."""
    mu = np.asarray(mu, dtype=np.float64)
    return mu + math.sqrt(cfg.lambda_sq * (1.0 - cfg.delta ** 2)) * rng.standard_normal(mu.shape)


def _norm(a) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


def restore(x_T, mu, source, mode: str, cfg: SdeConfig, rng: np.random.Generator | None = None,
            start: int | None = None, reference=None, final_step: str = "auto",
            bound: float | None = DIVERGENCE_BOUND) -> Trajectory:
    """Run the reverse process from step ``start`` (default ``T``) down to 0.

    ``final_step`` controls the i = 1 update: ``"posterior"`` replaces it with
    the noiseless posterior mean around the clean state implied by the
    score, ``"euler"`` uses the ordinary stepper, ``"auto"`` picks posterior
    for learned sources and euler for exact ones.  ``bound`` aborts the run
    once any component exceeds it in magnitude (``None`` disables the check;
    non-finite states always abort).
    """
    if mode not in ("sde", "ode"):
        raise ValueError(f"mode must be 'sde' or 'ode', got {mode!r}")
    if final_step not in ("auto", "posterior", "euler"):
        raise ValueError(f"unknown final_step {final_step!r}")
    x = np.asarray(x_T, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    _check_shapes(x, mu)
    if isinstance(source, ExactScore):
        _check_shapes(source.x0, mu)
    if mode == "sde" and rng is None:
        raise ValueError("sde mode needs a random generator")
    if final_step == "auto":
        final_step = "euler" if isinstance(source, ExactScore) else "posterior"
    start = cfg.T if start is None else int(start)
    cfg.check_index(start)
    if reference is None and isinstance(source, ExactScore):
        reference = source.x0

    traj = Trajectory(states=[x.copy()])
    for i in range(start, 0, -1):
        score = source.score(x, mu, i, cfg)
        drift = reverse_drift(x, i, mu, score, cfg, ode=(mode == "ode"))
        noise_norm = 0.0
        if i == 1 and final_step == "posterior":
            x0_hat = clean_estimate(x, mu, i, score, cfg)
            x_next = optimal_reverse_state(x, i, x0_hat, mu, cfg)
        elif mode == "sde":
            xi = rng.standard_normal(x.shape)
            noise = math.sqrt(cfg.sigma_sq[i] * cfg.dt) * xi
            noise_norm = _norm(noise)
            x_next = x - drift * cfg.dt + noise
        else:
            x_next = x - drift * cfg.dt
        if not np.all(np.isfinite(x_next)):
            raise DivergenceError(i, "non-finite state")
        if bound is not None and np.max(np.abs(x_next)) > bound:
            raise DivergenceError(i, f"state magnitude exceeded {bound}")
        x = x_next
        log = StepLog(i=i, score_norm=_norm(score), drift_norm=_norm(drift * cfg.dt), noise_norm=noise_norm)
        if reference is not None:
            log.psnr = psnr(x, reference)
        traj.states.append(x.copy())
        traj.step_logs.append(log)
    return traj

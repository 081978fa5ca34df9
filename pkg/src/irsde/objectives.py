"""Training objectives (noise matching and maximum likelihood) with their
gradients w.r.t. the predicted noise, plus the DDPM reverse mean."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import DegenerateVarianceError, SdeConfig, _check_shapes
from .solvers import optimal_reverse_state

NORMS = ("l1", "l2")


@dataclass
class LossRecord:
    iteration: int
    i: int
    loss: float
    objective: str
    gamma: float = 1.0


def _pointwise(diff, norm):
    if norm == "l1":
        return np.abs(diff)
    if norm == "l2":
        return diff ** 2
    raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def _check_norm(norm):
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def _pointwise_grad(diff, norm):
    return np.sign(diff) if norm == "l1" else 2.0 * diff


def _check_gamma(gamma):
    if np.any(np.asarray(gamma) <= 0):
        raise ValueError("loss weights must be positive")


def noise_matching_loss(eps_hat, eps, gamma=1.0, norm: str = "l1") -> float:
    """``gamma * mean |eps_hat - eps|`` (or the squared error for ``norm="l2"``)."""
    _check_shapes(eps_hat, eps)
    _check_gamma(gamma)
    diff = np.asarray(eps_hat, dtype=np.float64) - eps
    return float(np.mean(gamma * _pointwise(diff, norm)))


def noise_matching_grad(eps_hat, eps, gamma=1.0, norm: str = "l1") -> np.ndarray:
    _check_shapes(eps_hat, eps)
    _check_norm(norm)
    diff = np.asarray(eps_hat, dtype=np.float64) - eps
    return gamma * _pointwise_grad(diff, norm) / diff.size


def drift_only_reverse(x_i, i, eps_hat, mu, cfg: SdeConfig):
    """``x_i - [theta_i (mu - x_i) - sigma_i^2 score] dt`` with the score from ``eps_hat``."""
    score = -eps_hat / np.sqrt(cfg.variance(i))
    return x_i - (cfg.theta[i] * (mu - x_i) - cfg.sigma_sq[i] * score) * cfg.dt


def _ml_residual(x_i, i, eps_hat, x0, mu, cfg):
    _check_shapes(x_i, eps_hat, x0, mu)
    cfg.check_index(i)
    if np.any(np.asarray(i) < 1):
        raise DegenerateVarianceError("maximum-likelihood loss needs i >= 1")
    target = optimal_reverse_state(x_i, i, x0, mu, cfg)
    return drift_only_reverse(x_i, i, np.asarray(eps_hat, dtype=np.float64), mu, cfg) - target


def ml_loss(x_i, i, eps_hat, x0, mu, cfg: SdeConfig, gamma=1.0, norm: str = "l1") -> float:
    """Distance between the drift-only reversed state and the optimal reverse state.

    ``i`` (and ``gamma``) may be arrays broadcasting against the states, one
    entry per batch row.
    """
    _check_gamma(gamma)
    r = _ml_residual(x_i, i, eps_hat, x0, mu, cfg)
    return float(np.mean(gamma * _pointwise(r, norm)))


def ml_grad(x_i, i, eps_hat, x0, mu, cfg: SdeConfig, gamma=1.0, norm: str = "l1") -> np.ndarray:
    _check_norm(norm)
    r = _ml_residual(x_i, i, eps_hat, x0, mu, cfg)
    # d(reversed)/d(eps_hat) = -sigma_i^2 dt / sqrt(v_i)
    jac = -cfg.sigma_sq[i] * cfg.dt / np.sqrt(cfg.variance(i))
    return gamma * _pointwise_grad(r, norm) * jac / r.size


def ml_target_noise(x_i, i, x0, mu, cfg: SdeConfig):
    """The ``eps_hat`` for which the drift-only step lands exactly on the optimal state."""
    target = optimal_reverse_state(x_i, i, x0, mu, cfg)
    base = x_i - cfg.theta[i] * (mu - x_i) * cfg.dt
    return (base - target) * np.sqrt(cfg.variance(i)) / (cfg.sigma_sq[i] * cfg.dt)


def ddpm_reverse_mean(x_t, x0, alphas, t: int):
    """DDPM posterior mean for step ``t`` (1-based) with ``alphas[t-1] = alpha_t``.

    ``alpha_bar_0`` is taken as 1.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if np.any(alphas <= 0.0) or np.any(alphas >= 1.0):
        raise ValueError("every alpha must lie strictly in (0, 1)")
    if not 1 <= t <= len(alphas):
        raise IndexError(f"t must be in [1, {len(alphas)}], got {t}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(alphas)])
    a_t = alphas[t - 1]
    beta_t = 1.0 - a_t
    denom = 1.0 - alpha_bar[t]
    if denom == 0.0:
        raise ValueError("degenerate alpha_bar_t == 1")
    return (np.sqrt(a_t) * (1.0 - alpha_bar[t - 1]) * x_t + np.sqrt(alpha_bar[t - 1]) * beta_t * x0) / denom

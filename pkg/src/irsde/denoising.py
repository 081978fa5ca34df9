"""Denoising special case (mu equal to the clean state) and the entry-step rule
for a known real noise level."""

from __future__ import annotations

import math

import numpy as np

from .sde import SdeConfig, _check_shapes
from .solvers import DivergenceError, ExactScore, Trajectory, StepLog, _check_step, _norm, DIVERGENCE_BOUND
from .metrics import psnr


def denoising_drift(i, score, cfg: SdeConfig, ode: bool = False):
    decay = math.exp(-2.0 * cfg.theta_bar[i])
    factor = decay if ode else 1.0 + decay
    return -0.5 * cfg.sigma_sq[i] * factor * score


def denoising_sde_step(x_i, i: int, score, cfg: SdeConfig, rng: np.random.Generator):
    _check_shapes(x_i, score)
    _check_step(i, cfg)
    xi = rng.standard_normal(np.shape(x_i))
    return x_i - denoising_drift(i, score, cfg) * cfg.dt + math.sqrt(cfg.sigma_sq[i] * cfg.dt) * xi


def denoising_ode_step(x_i, i: int, score, cfg: SdeConfig):
    _check_shapes(x_i, score)
    _check_step(i, cfg)
    return x_i - denoising_drift(i, score, cfg, ode=True) * cfg.dt


def t_star(sigma_real: float, cfg: SdeConfig) -> int:
    """Grid index whose marginal variance is closest to ``sigma_real**2``.

    Ties go to the larger index.  Noise at or above the stationary level has
    no matching step.
    """
    var = float(sigma_real) ** 2
    if not var > 0.0:
        raise ValueError(f"sigma_real must be positive, got {sigma_real}")
    if var >= cfg.lambda_sq:
        raise ValueError(
            f"noise variance {var:.6g} is not below the stationary variance {cfg.lambda_sq:.6g}; "
            "no step matches this noise level")
    gap = np.abs(cfg.variances - var)
    best = np.flatnonzero(gap == gap.min())
    return int(best[-1])


def denoise(y, start: int, source, mode: str, cfg: SdeConfig, rng=None, reference=None) -> Trajectory:
    """Run the denoising SDE/ODE from ``x_start = y`` down to step 0."""
    if mode not in ("sde", "ode"):
        raise ValueError(f"mode must be 'sde' or 'ode', got {mode!r}")
    if mode == "sde" and rng is None:
        raise ValueError("sde mode needs a random generator")
    cfg.check_index(start)
    y = np.asarray(y, dtype=np.float64)
    x = y
    if reference is None and isinstance(source, ExactScore):
        reference = source.x0
    traj = Trajectory(states=[x.copy()])
    for i in range(start, 0, -1):
        # the clean state stands in for mu; a learned model is conditioned on the observation
        mu = source.x0 if isinstance(source, ExactScore) else y
        score = source.score(x, mu, i, cfg)
        drift = denoising_drift(i, score, cfg, ode=(mode == "ode"))
        noise_norm = 0.0
        if mode == "sde":
            noise = math.sqrt(cfg.sigma_sq[i] * cfg.dt) * rng.standard_normal(x.shape)
            noise_norm = _norm(noise)
            x = x - drift * cfg.dt + noise
        else:
            x = x - drift * cfg.dt
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            raise DivergenceError(i, "state diverged")
        log = StepLog(i=i, score_norm=_norm(score), drift_norm=_norm(drift * cfg.dt), noise_norm=noise_norm)
        if reference is not None:
            log.psnr = psnr(x, reference)
        traj.states.append(x.copy())
        traj.step_logs.append(log)
    return traj

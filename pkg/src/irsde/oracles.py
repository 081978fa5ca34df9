"""Independent numerical oracles and the self-check suite behind ``irsde validate``.

Every oracle recomputes its quantity by a different route (quadrature,
Monte Carlo, direct minimization, finite differences, Gaussian products)
rather than reusing the closed forms it checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .denoising import t_star
from .model import ScoreModel
from .objectives import ddpm_reverse_mean, ml_grad, ml_loss, noise_matching_grad, noise_matching_loss
from .sde import SdeConfig, exact_score, marginal_stats, sample_forward, transition_stats
from .solvers import optimal_reverse_state


def quadrature_variance(cfg: SdeConfig, s: int, t: int, n: int = 10_000) -> float:
    """Trapezoidal quadrature of ``int_s^t sigma_z^2 exp(-2 theta_bar_{z:t}) dz``.

    theta is piecewise constant on the grid (step ``j`` covers
    ``((j-1) dt, j dt]``), so subintervals are laid out cell by cell and each
    cell integrates its own smooth piece.
    """
    if t <= s:
        return 0.0
    cells = t - s
    counts = [n // cells + (1 if k < n % cells else 0) for k in range(cells)]
    # cumulative theta at grid points, summed independently of cfg.theta_bar
    cum = [0.0]
    for j in range(1, cfg.T + 1):
        cum.append(cum[-1] + float(cfg.theta[j]) * cfg.dt)
    total = 0.0
    for k, m in enumerate(counts):
        j = s + k + 1
        z = np.linspace((j - 1) * cfg.dt, j * cfg.dt, max(m, 1) + 1)
        big_theta = cum[j - 1] + float(cfg.theta[j]) * (z - (j - 1) * cfg.dt)
        f = cfg.sigma_sq[j] * np.exp(-2.0 * (cum[t] - big_theta))
        total += float(np.trapezoid(f, z))
    return total


def bayes_nll(x_prev, x_i, i, x0, mu, cfg: SdeConfig) -> float:
    """``-log p(x_i | x_{i-1}) - log p(x_{i-1} | x0)`` up to a constant (scalar states)."""
    a = math.exp(-cfg.theta[i] * cfg.dt)
    s2 = cfg.lambda_sq * (1.0 - a * a)
    tb = cfg.theta_bar[i - 1]
    m_prev = mu + (x0 - mu) * math.exp(-tb)
    v_prev = cfg.lambda_sq * (1.0 - math.exp(-2.0 * tb))
    return (x_i - mu - (x_prev - mu) * a) ** 2 / (2 * s2) + (x_prev - m_prev) ** 2 / (2 * v_prev)


def golden_argmin(x_i, i, x0, mu, cfg: SdeConfig) -> float:
    """Golden-section minimizer of the Bayes NLL over ``x_{i-1}`` (needs ``i >= 2``)."""
    if i < 2:
        raise ValueError("the NLL oracle needs i >= 2 (p(x_0 | x0) is a point mass)")
    f = lambda x: bayes_nll(x, x_i, i, x0, mu, cfg)
    lo, hi = min(x_i, x0, mu) - 1.0, max(x_i, x0, mu) + 1.0
    res = minimize_scalar(f, bracket=(lo, 0.5 * (lo + hi), hi), method="golden", tol=1e-12)
    return float(res.x)


def gaussian_posterior_mean(x_i, i, x0, mu, cfg: SdeConfig) -> float:
    """Precision-weighted product of the two Gaussian factors in ``x_{i-1}``."""
    a = math.exp(-cfg.theta[i] * cfg.dt)
    s2 = cfg.lambda_sq * (1.0 - a * a)
    tb = cfg.theta_bar[i - 1]
    m_prev = mu + (x0 - mu) * math.exp(-tb)
    v_prev = cfg.lambda_sq * (1.0 - math.exp(-2.0 * tb))
    precision = 1.0 / v_prev + a * a / s2
    return (m_prev / v_prev + a * (x_i - mu + a * mu) / s2) / precision


def ddpm_posterior_oracle(x_t, x0, alphas, t: int):
    """DDPM posterior mean via the Gaussian product of q(x_t | x_{t-1}) and q(x_{t-1} | x0)."""
    a_t = alphas[t - 1]
    beta = 1.0 - a_t
    abar_prev = float(np.prod(alphas[:t - 1]))
    if t == 1:
        return np.asarray(x0, dtype=np.float64) * 1.0
    var_prev = 1.0 - abar_prev
    precision = a_t / beta + 1.0 / var_prev
    return (math.sqrt(a_t) * np.asarray(x_t) / beta + math.sqrt(abar_prev) * np.asarray(x0) / var_prev) / precision


def gaussian_logpdf(x, mean, var):
    return -0.5 * math.log(2 * math.pi * var) - (x - mean) ** 2 / (2 * var)


def finite_difference(f, params, idx, h: float = 1e-5) -> np.ndarray:
    out = np.empty(len(idx))
    for k, j in enumerate(idx):
        p = params.copy()
        p[j] += h
        fp = f(p)
        p[j] -= 2 * h
        fm = f(p)
        out[k] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b, floor: float = 1e-12) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def model_gradient_check(seed: int = 0, n_check: int = 64, objective: str = "ml", patch=(8,),
                         hidden=(16, 16), cfg: SdeConfig | None = None) -> float:
    """Max relative error between backprop and central differences (h = 1e-5) through
    the model and loss on ``n_check`` random parameters.

    Uses the smooth squared-error reduction so differences are not taken
    across L1 kinks.
    """
    cfg = cfg or SdeConfig.build()
    rng = np.random.default_rng(seed)
    model = ScoreModel.for_config(cfg, patch_shape=patch, hidden=hidden, rng=rng)
    model.params = model.params + 0.1 * rng.standard_normal(model.n_params)
    B = 4
    x0 = rng.uniform(0.2, 0.8, (B, *patch))
    mu = x0 + 0.1 * rng.standard_normal(x0.shape)
    i = rng.integers(1, cfg.T + 1, size=B)
    ib = i.reshape(-1, *([1] * len(patch)))
    eps = rng.standard_normal(x0.shape)
    x_i = mu + (x0 - mu) * np.exp(-cfg.theta_bar[ib]) + np.sqrt(cfg.variance(ib)) * eps

    def loss_and_grad(p):
        raw, cache = model.forward(model.features(x_i, mu, i), p)
        eps_hat = model.output_to_noise(raw.reshape(x0.shape), x_i, mu, ib)
        if objective == "ml":
            loss = ml_loss(x_i, ib, eps_hat, x0, mu, cfg, norm="l2")
            g = ml_grad(x_i, ib, eps_hat, x0, mu, cfg, norm="l2")
        else:
            loss = noise_matching_loss(eps_hat, eps, norm="l2")
            g = noise_matching_grad(eps_hat, eps, norm="l2")
        return loss, model.backward(cache, model.noise_grad_to_output(g, ib).reshape(B, -1), p)

    _, grad = loss_and_grad(model.params)
    idx = rng.choice(model.n_params, size=min(n_check, model.n_params), replace=False)
    fd = finite_difference(lambda p: loss_and_grad(p)[0], model.params, idx)
    # entries that are numerically zero next to the largest gradient carry only roundoff
    return rel_err(grad[idx], fd, floor=1e-6 * float(np.max(np.abs(grad))))


# -- self-check suite --------------------------------------------------------

@dataclass
class CheckResult:
    group: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _check_schedule(cfg: SdeConfig):
    ratio = cfg.sigma_sq[cfg.theta > 0] / cfg.theta[cfg.theta > 0]
    yield "sigma^2/theta == 2 lambda^2", bool(np.allclose(ratio, 2 * cfg.lambda_sq, rtol=1e-14, atol=0)), \
        f"max dev {np.max(np.abs(ratio / (2 * cfg.lambda_sq) - 1)):.2e}"
    err = abs(math.exp(-cfg.theta_bar[-1]) / cfg.delta - 1)
    yield "exp(-theta_bar_T) == delta", err < 1e-10, f"rel err {err:.2e}"
    yield "theta_bar non-decreasing", bool(np.all(np.diff(cfg.theta_bar) >= 0) and cfg.theta_bar[0] == 0), ""


def _check_kernel(cfg: SdeConfig, rng):
    worst = 0.0
    bounded = True
    for _ in range(50):
        s, u, t = sorted(rng.integers(0, cfg.T + 1, size=3))
        x, mu = rng.normal(size=2)
        k_su = transition_stats(np.array(x), s, u, np.array(mu), cfg)
        k_ut = transition_stats(k_su.mean, u, t, np.array(mu), cfg)
        k_st = transition_stats(np.array(x), s, t, np.array(mu), cfg)
        decay = math.exp(-(cfg.theta_bar[t] - cfg.theta_bar[u]))
        composed_var = k_ut.variance + decay ** 2 * k_su.variance
        worst = max(worst, rel_err(k_ut.mean, k_st.mean), rel_err(composed_var, k_st.variance, floor=1e-300))
        bounded &= 0 <= k_st.variance <= cfg.lambda_sq
    yield "Chapman-Kolmogorov composition", worst < 1e-10, f"max rel err {worst:.2e}"
    yield "0 <= v_{s:t} <= lambda^2", bool(bounded), ""


def _check_quadrature(cfg: SdeConfig, rng):
    worst = 0.0
    for _ in range(20):
        s, t = sorted(rng.choice(cfg.T + 1, size=2, replace=False))
        v = transition_stats(np.array(1.0), int(s), int(t), np.array(0.0), cfg).variance
        worst = max(worst, rel_err(v, quadrature_variance(cfg, int(s), int(t))))
    yield "closed-form variance vs quadrature", worst < 1e-6, f"max rel err {worst:.2e}"


def _check_moments(cfg: SdeConfig, rng):
    ok = True
    worst = 0.0
    for i in sorted({max(1, cfg.T // 10), max(1, cfg.T // 2), cfg.T}):
        x0, mu = np.full(100_000, 1.0), np.zeros(100_000)
        x, _ = sample_forward(x0, mu, i, cfg, rng)
        st = marginal_stats(np.array(1.0), np.array(0.0), i, cfg)
        n = x.size
        z_mean = abs(x.mean() - st.mean) / math.sqrt(st.variance / n)
        z_var = abs(x.var() - st.variance) / (st.variance * math.sqrt(2.0 / (n - 1)))
        worst = max(worst, z_mean, z_var)
        ok &= z_mean < 4 and z_var < 4
    yield "Monte Carlo moments within 4 s.e.", bool(ok), f"max z {worst:.2f}"


def _check_score(cfg: SdeConfig, rng):
    worst = 0.0
    for _ in range(20):
        i = int(rng.integers(1, cfg.T + 1))
        x0, mu = rng.uniform(0, 1, size=2)
        st = marginal_stats(np.array(x0), np.array(mu), i, cfg)
        x = float(st.mean) + math.sqrt(st.variance) * rng.normal()
        h = 1e-4 * math.sqrt(st.variance)
        fd = (gaussian_logpdf(x + h, float(st.mean), st.variance)
              - gaussian_logpdf(x - h, float(st.mean), st.variance)) / (2 * h)
        worst = max(worst, rel_err(exact_score(np.array(x), np.array(x0), np.array(mu), i, cfg), fd))
    yield "exact score vs finite-difference log-pdf", worst < 1e-5, f"max rel err {worst:.2e}"


def _check_posterior(cfg: SdeConfig, rng):
    worst_gs, worst_lin = 0.0, 0.0
    for _ in range(100):
        i = int(rng.integers(2, cfg.T + 1))
        x_i, x0, mu = rng.uniform(-1, 1, size=3)
        got = float(optimal_reverse_state(np.array(x_i), i, np.array(x0), np.array(mu), cfg))
        worst_gs = max(worst_gs, abs(got - golden_argmin(x_i, i, x0, mu, cfg)))
        worst_lin = max(worst_lin, abs(got - gaussian_posterior_mean(x_i, i, x0, mu, cfg)))
    x0 = rng.uniform(size=5)
    first = optimal_reverse_state(rng.uniform(size=5), 1, x0, rng.uniform(size=5), cfg)
    yield "optimal state vs golden-section NLL argmin", worst_gs < 1e-4, f"max abs err {worst_gs:.2e}"
    yield "optimal state vs Gaussian posterior mean", worst_lin < 1e-10, f"max abs err {worst_lin:.2e}"
    err1 = float(np.max(np.abs(first - x0)))
    yield "i = 1 returns x0", err1 < 1e-12, f"max abs err {err1:.2e}"


def _check_ddpm(cfg: SdeConfig, rng):
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(2, 50))
        alphas = 1.0 - rng.uniform(1e-4, 0.2, size=T)
        t = int(rng.integers(2, T + 1))
        x_t, x0 = rng.normal(size=2)
        worst = max(worst, abs(ddpm_reverse_mean(x_t, x0, alphas, t) - ddpm_posterior_oracle(x_t, x0, alphas, t)))
    yield "DDPM reverse mean vs Gaussian-product oracle", worst < 1e-12, f"max abs err {worst:.2e}"


def _check_gradients(cfg: SdeConfig, rng):
    for obj in ("ml", "nm"):
        err = model_gradient_check(seed=int(rng.integers(1 << 31)), objective=obj, cfg=cfg)
        yield f"backprop vs finite differences ({obj})", err < 1e-4, f"max rel err {err:.2e}"


def _check_tstar(cfg: SdeConfig, rng):
    v = cfg.variances
    hits = [t_star(math.sqrt(v[i]), cfg) == i for i in range(1, cfg.T + 1) if v[i] < cfg.lambda_sq]
    yield "t_star(sqrt(v_i)) == i", all(hits), f"{sum(hits)}/{len(hits)} grid points"
    sig = np.linspace(1e-4, 0.999, 200) * math.sqrt(cfg.lambda_sq)
    ts = [t_star(s, cfg) for s in sig]
    yield "t_star monotone in sigma", bool(np.all(np.diff(ts) >= 0)), ""


GROUPS = {
    "schedule": _check_schedule,
    "kernel": _check_kernel,
    "quadrature": _check_quadrature,
    "moments": _check_moments,
    "score": _check_score,
    "posterior": _check_posterior,
    "ddpm": _check_ddpm,
    "gradients": _check_gradients,
    "tstar": _check_tstar,
}


def run_checks(cfg: SdeConfig, only=None, seed: int = 0) -> list:
    results = []
    for group, fn in GROUPS.items():
        if only and group not in only:
            continue
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        args = (cfg,) if group == "schedule" else (cfg, rng)
        for name, passed, detail in fn(*args):
            results.append(CheckResult(group, name, bool(passed), detail))
        results[-1].seconds = time.perf_counter() - t0
    return results

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsde.degradations import smooth_image
from irsde.denoising import denoise, denoising_ode_step, denoising_sde_step, t_star
from irsde.metrics import mse
from irsde.sde import SdeConfig, exact_score, marginal_stats
from irsde.solvers import ExactScore, reverse_ode_step, reverse_sde_step


class _Fixed:
    """Generator stand-in that replays one noise draw."""

    def __init__(self, xi):
        self.xi = xi

    def standard_normal(self, shape):
        return np.broadcast_to(self.xi, shape).copy()


def test_sde_step_zero_score_is_pure_diffusion(cfg):
    x = np.linspace(0, 1, 5)
    xi = np.random.default_rng(0).standard_normal(5)
    out = denoising_sde_step(x, 40, np.zeros(5), cfg, _Fixed(xi))
    np.testing.assert_allclose(out, x + math.sqrt(cfg.sigma_sq[40] * cfg.dt) * xi, rtol=1e-15)


def test_ode_step_zero_score_is_identity(cfg):
    x = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(denoising_ode_step(x, 40, np.zeros(5), cfg), x)


def test_ode_step_deterministic(cfg):
    x, s = np.linspace(0, 1, 5), np.linspace(-1, 1, 5)
    np.testing.assert_array_equal(denoising_ode_step(x, 7, s, cfg), denoising_ode_step(x, 7, s, cfg))


def test_drift_coefficient_large_theta_bar_limit():
    cfg = SdeConfig.build(delta=1e-10)
    from irsde.denoising import denoising_drift
    s = np.array(1.0)
    i = cfg.T
    assert float(denoising_drift(i, s, cfg)) == pytest.approx(-0.5 * cfg.sigma_sq[i], rel=1e-15)
    assert float(denoising_drift(i, s, cfg, ode=True)) == pytest.approx(0.0, abs=1e-20)


@given(st.integers(1, 100), st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3),
       st.sampled_from(["constant", "linear", "cosine"]))
def test_matches_general_step_when_mu_is_x0(i, x0, z, xi, kind):
    # with mu = x0 the mean-reverting drift is expressible through the exact score
    cfg = SdeConfig.build(schedule=kind)
    x0a = np.array(x0)
    x_i = marginal_stats(x0a, x0a, i, cfg).mean + math.sqrt(cfg.variance(i)) * z
    s = exact_score(x_i, x0a, x0a, i, cfg)
    a = reverse_sde_step(x_i, i, x0a, s, cfg, _Fixed(xi))
    b = denoising_sde_step(x_i, i, s, cfg, _Fixed(xi))
    assert float(a) == pytest.approx(float(b), rel=1e-12, abs=1e-12)
    a = reverse_ode_step(x_i, i, x0a, s, cfg)
    b = denoising_ode_step(x_i, i, s, cfg)
    assert float(a) == pytest.approx(float(b), rel=1e-12, abs=1e-12)


def test_ode_denoising_removes_noise():
    cfg = SdeConfig.build()
    rng = np.random.default_rng(8)
    x0 = smooth_image(16, rng)
    sigma = 8.0 / 255.0
    y = x0 + sigma * rng.standard_normal(x0.shape)
    start = t_star(sigma, cfg)
    assert start < cfg.T
    out = denoise(y, start, ExactScore(x0), "ode", cfg).final
    assert mse(out, x0) < mse(y, x0) / 5


def test_denoise_sde_deterministic_under_seed(cfg):
    x0 = np.full((16, 16), 0.5)
    y = x0 + 0.02
    a = denoise(y, 30, ExactScore(x0), "sde", cfg, np.random.default_rng(2)).final
    b = denoise(y, 30, ExactScore(x0), "sde", cfg, np.random.default_rng(2)).final
    np.testing.assert_array_equal(a, b)


def test_t_star_exact_grid_hits(cfg):
    v = cfg.variances
    for i in range(1, cfg.T + 1):
        assert t_star(math.sqrt(v[i]), cfg) == i


def test_t_star_terminal(cfg):
    assert t_star(math.sqrt(cfg.lambda_sq * (1 - 0.005 ** 2)), cfg) == cfg.T
    assert t_star(math.sqrt(cfg.lambda_sq) * (1 - 1e-9), cfg) == cfg.T


@pytest.mark.parametrize("sigma", [0.0, -0.1])
def test_t_star_rejects_non_positive(cfg, sigma):
    with pytest.raises(ValueError):
        t_star(sigma, cfg)


def test_t_star_rejects_at_or_above_stationary(cfg):
    with pytest.raises(ValueError):
        t_star(math.sqrt(cfg.lambda_sq), cfg)
    with pytest.raises(ValueError):
        t_star(25 / 255, cfg)


@given(st.floats(1e-4, 0.9999))
def test_t_star_variance_within_half_step(frac):
    cfg = SdeConfig.build()
    sigma = frac * math.sqrt(cfg.lambda_sq)
    k = t_star(sigma, cfg)
    v = cfg.variances
    gap = max(v[k] - v[k - 1] if k > 0 else 0.0, v[k + 1] - v[k] if k < cfg.T else 0.0)
    assert abs(v[k] - sigma ** 2) <= 0.5 * gap + 1e-18


@given(st.floats(1e-4, 0.9999), st.floats(1e-4, 0.9999))
def test_t_star_monotone(a, b):
    cfg = SdeConfig.build()
    lam = math.sqrt(cfg.lambda_sq)
    lo, hi = sorted((a, b))
    assert t_star(lo * lam, cfg) <= t_star(hi * lam, cfg)


def test_t_star_tie_goes_to_larger_index():
    # dyadic grid so the midpoint is exact: 0.25 sits 0.125 from both 0.125 and 0.375
    grid = SimpleNamespace(lambda_sq=1.0, variances=np.array([0.0, 0.125, 0.375, 0.5]))
    assert t_star(0.5, grid) == 2

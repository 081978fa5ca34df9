import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irsde.model import MAGIC, Adam, ScoreModel, softplus, time_embedding
from irsde.oracles import finite_difference, model_gradient_check
from irsde.sde import SdeConfig

# -lr * mhat / (sqrt(vhat) + eps) with mhat = vhat = 1, lr = 1e-4, eps = 1e-8 (evaluated with mpmath)
ADAM_FIRST_STEP = -0.0000999999990000000099999999


def _random_model(seed=0, precond=False, patch=(8,), hidden=(16, 12)):
    cfg = SdeConfig.build()
    rng = np.random.default_rng(seed)
    m = ScoreModel.for_config(cfg, preconditioned=precond, patch_shape=patch, hidden=hidden, rng=rng)
    m.params = rng.normal(0, 0.3, m.n_params)
    return m, cfg, rng


def test_zero_output_layer_predicts_zero_noise():
    cfg = SdeConfig.build()
    m = ScoreModel.for_config(cfg, preconditioned=False, patch_shape=(8,), hidden=(16,))
    rng = np.random.default_rng(0)
    for i in (1, 50, 100):
        np.testing.assert_array_equal(m.predict(rng.uniform(size=20), rng.uniform(size=20), i), 0.0)


def test_zero_output_layer_preconditioned_is_exact_score_for_mu():
    # with F = 0 the implied clean state is mu, so eps_hat = (x - mu)/sqrt(v_i)
    cfg = SdeConfig.build()
    m = ScoreModel.for_config(cfg, patch_shape=(8,), hidden=(16,))
    rng = np.random.default_rng(0)
    x, mu = rng.uniform(size=16), rng.uniform(size=16)
    np.testing.assert_allclose(m.predict(x, mu, 30), (x - mu) / math.sqrt(cfg.variance(30)), rtol=1e-14)


def test_forward_deterministic():
    m, _, rng = _random_model()
    x, mu = rng.uniform(size=24), rng.uniform(size=24)
    np.testing.assert_array_equal(m.predict(x, mu, 9), m.predict(x, mu, 9))


def test_forward_matches_straight_line_evaluation():
    m, _, rng = _random_model()
    feats = m.features(rng.uniform(size=(3, 8)), rng.uniform(size=(3, 8)), np.array([1, 40, 100]))
    out, _ = m.forward(feats)
    for row, got in zip(feats, out):
        a = list(row)
        for k, (W, b) in enumerate(m.weights()):
            z = [sum(a[p] * W[p, q] for p in range(len(a))) + b[q] for q in range(W.shape[1])]
            a = [math.log1p(math.exp(v)) if v < 30 else v for v in z] if k < len(m.layout) - 1 else z
        np.testing.assert_allclose(got, a, rtol=1e-12, atol=1e-12)


def test_forward_shape_errors():
    m, _, _ = _random_model()
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        m.predict(np.zeros(8), np.zeros(9), 3)


def test_backward_zero_weight_bias_gradient():
    cfg = SdeConfig.build()
    m = ScoreModel.for_config(cfg, preconditioned=False, patch_shape=(4,), hidden=(6,))
    feats = m.features(np.zeros((1, 4)), np.zeros((1, 4)), 5)
    _, cache = m.forward(feats)
    g = np.array([[0.3, -1.0, 2.0, 0.5]])
    grad = m.backward(cache, g)
    (_, _), (b_off, (n,)) = m.layout[-1]
    np.testing.assert_array_equal(grad[b_off:b_off + n], g[0])


def test_backward_requires_cache():
    m, _, _ = _random_model()
    with pytest.raises(ValueError):
        m.backward(None, np.zeros((1, 8)))


def test_backward_matches_finite_differences_on_linear_functional():
    m, _, rng = _random_model(seed=3)
    feats = m.features(rng.uniform(size=(5, 8)), rng.uniform(size=(5, 8)), rng.integers(1, 101, 5))
    w = rng.standard_normal((5, 8))
    _, cache = m.forward(feats)
    grad = m.backward(cache, w)
    idx = rng.choice(m.n_params, 64, replace=False)
    fd = finite_difference(lambda p: float(np.sum(w * m.forward(feats, p)[0])), m.params, idx)
    err = np.abs(grad[idx] - fd) / np.maximum(np.abs(fd), 1e-6 * np.max(np.abs(grad)))
    assert err.max() < 1e-4


@pytest.mark.parametrize("objective", ["ml", "nm"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_gradient_through_losses(objective, seed):
    assert model_gradient_check(seed=seed, objective=objective) < 1e-4


def test_backward_repeatable():
    m, _, rng = _random_model()
    feats = m.features(rng.uniform(size=(2, 8)), rng.uniform(size=(2, 8)), 7)
    _, cache = m.forward(feats)
    g = rng.standard_normal((2, 8))
    np.testing.assert_array_equal(m.backward(cache, g), m.backward(cache, g))


def test_layout_counts():
    m = ScoreModel(patch_shape=(8, 8), hidden=(256, 256), embed_dim=16)
    assert m.n_params == (128 + 16) * 256 + 256 + 256 * 256 + 256 + 256 * 64 + 64
    assert m.params.shape == (m.n_params,)
    last = m.layout[-1]
    assert last[1][0] + last[1][1][0] == m.n_params


@given(st.integers(1, 40), st.integers(1, 40))
def test_tiling_roundtrip(h, w):
    m = ScoreModel(patch_shape=(8, 8), hidden=(4,))
    x = np.arange(h * w, dtype=float).reshape(h, w)
    tiles, meta = m._tile(x)
    np.testing.assert_array_equal(m._untile(tiles, meta), x)
    m1 = ScoreModel(patch_shape=(8,), hidden=(4,))
    tiles, meta = m1._tile(x)
    np.testing.assert_array_equal(m1._untile(tiles, meta), x)


def test_time_embedding():
    e = time_embedding(np.array([0, 50, 100]), 100, 16)
    assert e.shape == (3, 16)
    np.testing.assert_array_equal(e, time_embedding(np.array([0, 50, 100]), 100, 16))
    assert np.all(np.abs(e) <= 1)


def test_softplus_stable():
    assert softplus(np.array(1000.0)) == 1000.0
    assert softplus(np.array(-1000.0)) == 0.0
    assert float(softplus(np.array(0.0))) == pytest.approx(math.log(2), rel=1e-15)


def test_checkpoint_roundtrip(tmp_path):
    m, _, rng = _random_model(precond=True)
    path = tmp_path / "m.irsde"
    m.save(path)
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    assert raw[-8:] == m.params[-1:].astype("<f8").tobytes()
    back = ScoreModel.load(path)
    np.testing.assert_array_equal(back.params, m.params)
    x, mu = rng.uniform(size=16), rng.uniform(size=16)
    np.testing.assert_array_equal(back.predict(x, mu, 12), m.predict(x, mu, 12))


def test_checkpoint_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAMODEL")
    with pytest.raises(ValueError):
        ScoreModel.load(bad)
    m, _, _ = _random_model()
    good = tmp_path / "m.irsde"
    m.save(good)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError):
        ScoreModel.load(good)


def test_adam_zero_gradient_keeps_params():
    opt = Adam(3)
    p = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(opt.step(p, np.zeros(3)), p)


def test_adam_first_step_hand_value():
    opt = Adam(1, lr=1e-4, beta1=0.9, beta2=0.99, eps=1e-8)
    out = opt.step(np.array([0.0]), np.array([1.0]))
    assert out[0] == pytest.approx(ADAM_FIRST_STEP, rel=1e-12)


def test_adam_rejects_non_finite():
    opt = Adam(2)
    with pytest.raises(FloatingPointError):
        opt.step(np.zeros(2), np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        opt.step(np.zeros(2), np.zeros(3))


def test_adam_deterministic_trajectory():
    def run():
        opt, p = Adam(4, lr=1e-2), np.ones(4)
        rng = np.random.default_rng(9)
        for _ in range(50):
            p = opt.step(p, rng.standard_normal(4))
        return p
    np.testing.assert_array_equal(run(), run())

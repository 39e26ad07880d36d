import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmlsp.enhancement import (BnParams, RunningStats, batch_norm_apply, batch_norm_backward,
                               batch_norm_forward, bn_weight_vector, bn_weight_vector_backward,
                               enhance_global)
from cmlsp.errors import DegenerateGamma, EmptyBatch, ShapeMismatch


def test_constant_channel_normalises_to_zero():
    x = np.random.default_rng(0).standard_normal((3, 2, 4, 4))
    x[:, 1] = 2.5
    out, stats = batch_norm_forward(x, BnParams(np.array([1.3, 0.7]), np.zeros(2)))
    np.testing.assert_array_equal(out[:, 1], 0.0)
    assert stats.var[1] == 0.0


def test_standard_normal_batch_stays_standard():
    x = np.random.default_rng(1).standard_normal((64, 3, 8, 8))
    out, _ = batch_norm_forward(x, BnParams.identity(3))
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 0.05)
    assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1) < 0.05)


def test_zero_gamma_gives_beta():
    x = np.random.default_rng(2).standard_normal((4, 3, 2, 2))
    beta = np.array([0.5, -1.0, 2.0])
    out, _ = batch_norm_forward(x, BnParams(np.zeros(3), beta))
    np.testing.assert_array_equal(out, np.broadcast_to(beta[None, :, None, None], out.shape))


def test_bn_errors():
    with pytest.raises(EmptyBatch):
        batch_norm_forward([], BnParams.identity(2))
    with pytest.raises(ShapeMismatch):
        batch_norm_forward([np.zeros((2, 2, 2)), np.zeros((2, 3, 2))], BnParams.identity(2))


def test_bn_output_moments():
    rng = np.random.default_rng(3)
    x = 2.0 + 3.0 * rng.standard_normal((16, 4, 5, 5))
    p = BnParams(np.array([1.5, -0.5, 2.0, 0.1]), np.array([0.0, 1.0, -2.0, 3.0]))
    out, stats = batch_norm_forward(x, p)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), p.beta, atol=1e-9)
    sigma = np.sqrt(stats.var)
    expected_std = np.abs(p.gamma) * sigma / np.sqrt(stats.var + p.eps)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), expected_std, atol=1e-6)


@pytest.mark.parametrize("gamma,expected", [
    ([1, 1, 1, 1], [0.25, 0.25, 0.25, 0.25]),
    ([3, 1], [0.75, 0.25]),
    ([-2, 2], [0.5, 0.5]),
])
def test_bn_weight_vector(gamma, expected):
    p = BnParams(np.array(gamma, float), np.zeros(len(gamma)))
    np.testing.assert_allclose(bn_weight_vector(p), expected, atol=1e-15)


def test_bn_weight_vector_degenerate():
    with pytest.raises(DegenerateGamma):
        bn_weight_vector(BnParams(np.zeros(3), np.zeros(3)))
    with pytest.raises(DegenerateGamma):
        bn_weight_vector(BnParams(np.array([1.0, -1.0]), np.zeros(2)), mode="signed")


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-10, 10)), st.floats(0.01, 100))
def test_bn_weight_vector_is_scale_free_distribution(gamma, scale):
    if np.abs(gamma).sum() < 1e-6:
        return
    v = bn_weight_vector(BnParams(gamma, np.zeros(6)))
    assert np.all(v >= 0) and abs(v.sum() - 1) < 1e-12
    np.testing.assert_allclose(bn_weight_vector(BnParams(scale * gamma, np.zeros(6))), v, atol=1e-12)


def _batch(rng, b=4, c=3, h=3, w=2):
    return rng.standard_normal((b, c, h, w))


def test_enhance_identity_when_bn_output_vanishes():
    batch = np.tile(np.array([1.0, -2.0, 4.0])[None, :, None, None], (3, 1, 2, 2))
    f_glo = np.array([0.1, 0.2, 0.3])
    p = BnParams(np.array([2.0, 1.0, 0.5]), np.zeros(3))
    np.testing.assert_array_equal(enhance_global(f_glo, batch[1], batch, p), f_glo)


def test_enhance_with_shift_only():
    batch = np.tile(np.array([1.0, -2.0, 4.0])[None, :, None, None], (3, 1, 2, 2))
    f_glo = np.array([0.1, 0.2, 0.3])
    beta = np.array([1.0, -1.0, 2.0])
    p = BnParams(np.array([2.0, 1.0, 1.0]), beta)
    np.testing.assert_allclose(enhance_global(f_glo, batch[0], batch, p),
                               f_glo + np.array([0.5, 0.25, 0.25]) * beta, atol=1e-15)


def test_enhance_matches_hand_composition():
    rng = np.random.default_rng(4)
    batch = _batch(rng)
    p = BnParams(rng.standard_normal(3), rng.standard_normal(3), eps=1e-3)
    f_glo = rng.standard_normal(3)
    target = batch[2]
    out = enhance_global(f_glo, target, batch, p)
    expected = f_glo.copy()
    lam = np.abs(p.gamma)
    for c in range(3):
        vals = batch[:, c].ravel()
        mu = sum(vals) / len(vals)
        var = sum((v - mu) ** 2 for v in vals) / len(vals)
        bn = [p.gamma[c] * (v - mu) / np.sqrt(var + p.eps) + p.beta[c] for v in target[c].ravel()]
        expected[c] += lam[c] / lam.sum() * sum(bn) / len(bn)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_enhance_requires_member_of_batch():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        enhance_global(np.zeros(3), rng.standard_normal((3, 3, 2)), _batch(rng), BnParams.identity(3))


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_bn_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    x = _batch(rng)
    gamma, beta = rng.standard_normal(3), rng.standard_normal(3)
    up = rng.standard_normal(x.shape)

    def f(xx, gg=gamma, bb=beta):
        return float((batch_norm_forward(xx, BnParams(gg, bb))[0] * up).sum())

    p = BnParams(gamma, beta)
    _, stats = batch_norm_forward(x, p)
    dx, dg, db = batch_norm_backward(up, x, p, stats)
    np.testing.assert_allclose(dx, _fd(f, x), atol=1e-6)
    np.testing.assert_allclose(dg, _fd(lambda g: f(x, gg=g), gamma), atol=1e-6)
    np.testing.assert_allclose(db, _fd(lambda b: f(x, bb=b), beta), atol=1e-6)


@pytest.mark.parametrize("mode", ["abs", "signed"])
def test_weight_vector_backward(mode):
    rng = np.random.default_rng(7)
    gamma = rng.standard_normal(5) + 3.0
    up = rng.standard_normal(5)
    g = bn_weight_vector_backward(up, gamma, mode)
    num = _fd(lambda gg: float(bn_weight_vector(BnParams(gg, np.zeros(5)), mode) @ up), gamma)
    np.testing.assert_allclose(g, num, atol=1e-7)


def test_running_stats_update():
    rs = RunningStats.fresh(2)
    x = np.random.default_rng(8).standard_normal((4, 2, 3, 3)) + 5
    _, stats = batch_norm_forward(x, BnParams.identity(2))
    rs.update(stats)
    np.testing.assert_allclose(rs.mean, 0.1 * stats.mean)
    np.testing.assert_allclose(rs.var, 0.9 + 0.1 * stats.var)
    out = batch_norm_apply(x, BnParams.identity(2), rs.as_batch_stats())
    assert out.shape == x.shape

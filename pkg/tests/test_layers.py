import numpy as np
import pytest

from fuse3d import layers as L
from fuse3d.params import ParamStore
from oracles import max_rel_error, numeric_grad


def store64(seed=0):
    s = ParamStore("t")
    rng = np.random.default_rng(seed)
    L.add_conv(s, "c", 3, 2, 3, rng, np.float64)
    L.add_batchnorm(s, "c.bn", 3, np.float64)
    L.add_linear(s, "lin", 3, 2, rng, np.float64)
    s.values["c.bn.gamma"][:] = rng.uniform(0.5, 1.5, 3)
    s.values["c.bn.beta"][:] = rng.normal(size=3)
    return s


def naive_conv(x, w, b):
    h, wd, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, wd, w.shape[-1]))
    for i in range(h):
        for j in range(wd):
            out[i, j] = np.einsum("abc,abcd->d", xp[i:i + 3, j:j + 3], w) + b
    return out


def test_conv_matches_naive():
    s = store64()
    x = np.random.default_rng(1).normal(size=(6, 5, 2))
    y, _ = L.conv3x3_forward(x, s, "c")
    np.testing.assert_allclose(y, naive_conv(x, s["c.weight"], s["c.bias"]), atol=1e-12)


def test_conv_block_gradients():
    s = store64()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 6, 2))
    r = rng.normal(size=(4, 6, 3))

    def loss():
        a, _ = L.conv_block_forward(x, s, "c", True, False)
        return float((a * r).sum())

    _, cache = L.conv_block_forward(x, s, "c", True, False)
    dx = L.conv_block_backward(r, cache, s)
    for name in s.trainable():
        if name.startswith("c"):
            assert max_rel_error(s.grads[name], numeric_grad(loss, s.values[name])) < 1e-7
    assert max_rel_error(dx, numeric_grad(loss, x)) < 1e-7


def test_batchnorm_running_stats():
    s = store64()
    x = np.random.default_rng(3).normal(2.0, 3.0, size=(50, 3))
    L.batchnorm_forward(x, s, "c.bn", train=True)
    np.testing.assert_allclose(s["c.bn.mean"], 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(s["c.bn.var"], 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batchnorm_train_output_normalized():
    s = ParamStore()
    L.add_batchnorm(s, "bn", 4, np.float64)
    x = np.random.default_rng(0).normal(5, 2, size=(100, 4))
    y, _ = L.batchnorm_forward(x, s, "bn", True)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=0), 1, atol=1e-4)


def test_linear_backward():
    s = store64()
    rng = np.random.default_rng(4)
    x = rng.normal(size=(7, 3))
    r = rng.normal(size=(7, 2))

    def loss():
        y, _ = L.linear_forward(x, s, "lin")
        return float((y * r).sum())

    _, cache = L.linear_forward(x, s, "lin")
    dx = L.linear_backward(r, cache, s)
    assert max_rel_error(s.grads["lin.weight"], numeric_grad(loss, s.values["lin.weight"])) < 1e-8
    assert max_rel_error(dx, numeric_grad(loss, x)) < 1e-8


def test_maxpool_first_max_gets_gradient():
    x = np.ones((2, 2, 1))
    y, cache = L.maxpool2_forward(x)
    dx = L.maxpool2_backward(np.ones_like(y), cache)
    assert dx[..., 0].tolist() == [[1, 0], [0, 0]]


def test_upsample_adjoint():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4, 2))
    dy = rng.normal(size=(6, 8, 2))
    lhs = (L.upsample2_forward(x) * dy).sum()
    rhs = (x * L.upsample2_backward(dy)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_glorot_bound():
    assert L.glorot_bound(3, 64) == pytest.approx(np.sqrt(6 / 67), rel=1e-15)

import numpy as np
import pytest

from fuse3d import seghead as S
from oracles import max_rel_error, numeric_grad


def test_output_shape():
    cfg = S.SegHeadConfig((4, 6, 6), 64, 5)
    p = S.init_seg_params(cfg, 0)
    logits, _ = S.seg_forward(np.random.default_rng(0).normal(size=(16, 24, 64)), p)
    assert logits.shape == (16, 24, 5)


def test_indivisible_size():
    p = S.init_seg_params(S.SegHeadConfig((4, 6, 6), 64, 5))
    with pytest.raises(ValueError):
        S.seg_forward(np.zeros((12, 16, 64)), p)


def test_bad_config():
    with pytest.raises(ValueError):
        S.SegHeadConfig((4, 6))


def test_translation_equivariance():
    cfg = S.SegHeadConfig((4, 6, 6), 8, 3)
    p = S.init_seg_params(cfg, 1, dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(16, 96, 8))
    shifted = np.zeros_like(x)
    shifted[:, 8:] = x[:, :-8]
    a, _ = S.seg_forward(x, p, train=False)
    b, _ = S.seg_forward(shifted, p, train=False)
    # columns far enough from both edges that the receptive field never
    # reaches the zero band or the image border
    np.testing.assert_allclose(b[:, 40:56], a[:, 32:48], atol=1e-5)


def test_finite_differences_float64():
    cfg = S.SegHeadConfig((2, 3, 3), 64, 3)
    p = S.init_seg_params(cfg, 3, dtype=np.float64)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 8, 64))
    r = rng.normal(size=(8, 8, 3))

    def loss():
        out, _ = S.seg_forward(x, p, True, update_stats=False)
        return float((out * r).sum())

    _, cache = S.seg_forward(x, p, True, update_stats=False)
    dx = S.seg_backward(r, cache, p)
    for name in p.trainable():
        assert max_rel_error(p.grads[name], numeric_grad(loss, p.values[name])) < 1e-6, name
    idx = rng.choice(x.size, 40, replace=False)
    num = numeric_grad(loss, x).reshape(-1)
    assert max_rel_error(dx.reshape(-1)[idx], num[idx]) < 1e-6

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fuse3d import lpointnet as P
from fuse3d.lpointnet import NetConfig
from oracles import max_rel_error, numeric_grad

TINY = NetConfig((2,), (2, 3), (2,), out_channels=2, zero_global_head=False)


def test_init_deterministic():
    a, b = P.init_params(seed=5), P.init_params(seed=5)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_init_bound_first_layer():
    store = P.init_params(NetConfig(zero_global_head=False), seed=0)
    w = store["local0.weight"]
    assert w.shape == (64, 3)
    bound = np.sqrt(6 / 67)
    assert abs(bound - 0.2992) < 1e-4
    assert np.all(np.abs(w) <= np.float32(bound))
    assert np.abs(w).max() > 0.9 * bound


def test_init_bn_and_bias():
    store = P.init_params()
    for k in store:
        if k.endswith(".bias") or k.endswith(".beta") or k.endswith(".mean"):
            assert not store[k].any()
        if k.endswith(".gamma") or k.endswith(".var"):
            assert np.all(store[k] == 1)


def test_zero_global_head_only_touches_global_half():
    store = P.init_params()
    w = store["head0.weight"]
    assert not w[:, 64:].any()
    assert w[:, :64].any()


def test_output_shape_and_singleton():
    store = P.init_params(seed=1)
    pts = np.random.default_rng(0).normal(size=(7, 3))
    out, cache = P.forward(pts, store)
    assert out.shape == (7, 61)
    one = pts[:1]
    _, c1 = P.forward(one, store, train=False, update_stats=False)
    g = c1.local
    for i in range(3):
        from fuse3d import layers as L
        g, _ = L.dense_block_forward(g, store, f"global{i}", False, False)
    np.testing.assert_array_equal(c1.pooled, g[0])


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        P.forward(np.zeros((0, 3)), P.init_params())


def test_wrong_width_rejected():
    with pytest.raises(ValueError):
        P.forward(np.zeros((4, 2)), P.init_params())


def test_bad_config():
    with pytest.raises(ValueError):
        NetConfig(local_widths=())
    with pytest.raises(ValueError):
        NetConfig(mode="test")


def test_eval_at_init_matches_normalized_batch():
    # running stats (0, 1) make eval BN the identity up to eps
    store = P.init_params(TINY, seed=2, dtype=np.float64)
    from fuse3d import layers as L
    x = np.random.default_rng(0).normal(size=(20, 2))
    y_eval, _ = L.batchnorm_forward(x.copy(), store, "local0.bn", train=False)
    np.testing.assert_allclose(y_eval, x / np.sqrt(1 + L.BN_EPS))


def test_train_forward_updates_running_stats_only_when_asked():
    store = P.init_params(TINY, seed=2)
    pts = np.random.default_rng(0).normal(size=(10, 3))
    P.forward(pts, store, TINY, train=True, update_stats=False)
    assert not store["local0.bn.mean"].any()
    P.forward(pts, store, TINY, train=True)
    assert store["local0.bn.mean"].any()


def test_eval_is_pure():
    store = P.init_params(seed=4)
    pts = np.random.default_rng(1).normal(size=(30, 3))
    before = {k: store[k].copy() for k in store}
    a, _ = P.forward(pts, store, train=False)
    b, _ = P.forward(pts, store, train=False)
    assert a.tobytes() == b.tobytes()
    for k in store:
        np.testing.assert_array_equal(store[k], before[k])


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_permutation_eval_bitwise(seed):
    rng = np.random.default_rng(seed)
    cfg = NetConfig((8,), (8, 16), (8,), zero_global_head=False)
    store = P.init_params(cfg, seed=seed % 1000)
    pts = rng.normal(size=(40, 3))
    perm = rng.permutation(40)
    out, c = P.forward(pts, store, cfg, train=False)
    out_p, c_p = P.forward(pts[perm], store, cfg, train=False)
    assert c_p.pooled.tobytes() == c.pooled.tobytes()
    assert out_p.tobytes() == out[perm].tobytes()


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_permutation_train_mode(seed):
    # batch statistics are float sums, so order shows up in the last bits only
    rng = np.random.default_rng(seed)
    cfg = NetConfig((8,), (8, 16), (8,), zero_global_head=False)
    store = P.init_params(cfg, seed=seed % 1000, dtype=np.float64)
    pts = rng.normal(size=(40, 3))
    perm = rng.permutation(40)
    out, c = P.forward(pts, store, cfg, update_stats=False)
    out_p, c_p = P.forward(pts[perm], store, cfg, update_stats=False)
    np.testing.assert_allclose(c_p.pooled, c.pooled, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(out_p, out[perm], rtol=1e-5, atol=1e-5)


def test_zero_upstream_gives_zero_grads():
    store = P.init_params(TINY, seed=0)
    pts = np.random.default_rng(0).normal(size=(5, 3))
    _, cache = P.forward(pts, store, TINY)
    P.backward(np.zeros((5, 2)), cache, store)
    for k in store.trainable():
        assert not store.grads[k].any()


def test_backward_leaves_values_unchanged():
    store = P.init_params(TINY, seed=0)
    before = {k: store[k].copy() for k in store}
    pts = np.random.default_rng(0).normal(size=(5, 3))
    _, cache = P.forward(pts, store, TINY, update_stats=False)
    P.backward(np.ones((5, 2)), cache, store)
    for k in store:
        np.testing.assert_array_equal(store[k], before[k])


def test_cache_mismatch_rejected():
    store = P.init_params(TINY, seed=0)
    _, cache = P.forward(np.ones((3, 3)), store, TINY)
    with pytest.raises(ValueError):
        P.backward(np.ones((3, 61)), cache, P.init_params(seed=0))


@pytest.mark.parametrize("seed", range(5))
def test_tiny_net_finite_differences(seed):
    rng = np.random.default_rng(seed)
    store = P.init_params(TINY, seed=seed, dtype=np.float64)
    pts = rng.normal(size=(3, 3))
    r = rng.normal(size=(3, 2))

    def loss():
        out, _ = P.forward(pts, store, TINY, train=True, update_stats=False)
        return float((out * r).sum())

    _, cache = P.forward(pts, store, TINY, train=True, update_stats=False)
    d_pts = P.backward(r, cache, store)
    for name in store.trainable():
        num = numeric_grad(loss, store.values[name])
        assert max_rel_error(store.grads[name], num) < 1e-6, name
    assert max_rel_error(d_pts, numeric_grad(loss, pts)) < 1e-6


def test_duplicate_non_argmax_point():
    cfg = NetConfig((4,), (4, 6), (4,), out_channels=3, zero_global_head=False)
    rng = np.random.default_rng(11)
    store = P.init_params(cfg, seed=3, dtype=np.float64)
    for k in store.buffers:
        if k.endswith(".mean"):
            store.values[k][:] = rng.normal(size=store[k].shape) * 0.1
    pts = rng.normal(size=(12, 3))
    _, cache = P.forward(pts, store, cfg, train=False)
    # a point that is the argmax of no channel
    dup = next(i for i in range(12) if i not in set(cache.argmax.tolist()))
    grad = rng.normal(size=(12, 3))

    def global_grads(points, upstream):
        store.zero_grad()
        _, c = P.forward(points, store, cfg, train=False)
        P.backward(upstream, c, store)
        return {k: store.grads[k].copy() for k in store.trainable() if k.startswith("global")}

    base = global_grads(pts, grad)
    split = grad.copy()
    split[dup] /= 2
    doubled = global_grads(np.vstack([pts, pts[dup:dup + 1]]), np.vstack([split, split[dup:dup + 1]]))
    assert any(np.abs(v).max() > 0 for v in base.values())
    for k in base:
        np.testing.assert_allclose(doubled[k], base[k], rtol=1e-12, atol=1e-14)

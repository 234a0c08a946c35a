"""PointNet segmentation encoder without spatial or feature transformer nets.

Per point: shared ``linear -> BN -> ReLU`` layers give a local feature; more
shared layers lift it to a wide feature whose channel-wise max over all
points is the global descriptor. Each point's local feature is concatenated
with the global descriptor and mapped by a per-point head to the output
channels (last layer purely linear).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .params import ParamStore

OUT_CHANNELS = 61


@dataclass(frozen=True)
class NetConfig:
    local_widths: tuple = (64, 64)
    global_widths: tuple = (64, 128, 1024)
    head_widths: tuple = (512, 256, 128)
    out_channels: int = OUT_CHANNELS
    input_channels: int = 3
    mode: str = "train"
    # With one view per batch the pooled descriptor is a per-view constant
    # inside head0, which head0's batch norm cancels in train mode; its
    # weights then get no gradient. Starting them at zero keeps eval mode
    # (running statistics) consistent with what was trained.
    zero_global_head: bool = True

    def __post_init__(self):
        for name in ("local_widths", "global_widths", "head_widths"):
            widths = tuple(int(w) for w in getattr(self, name))
            if not widths or min(widths) < 1:
                raise ValueError(f"{name} must be a non-empty list of positive ints")
            object.__setattr__(self, name, widths)
        if self.out_channels < 1 or self.input_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")


@dataclass
class ForwardCache:
    train: bool
    signature: dict
    local_caches: list = field(default_factory=list)
    global_caches: list = field(default_factory=list)
    head_caches: list = field(default_factory=list)
    head0_bn: tuple = None
    head0_mask: np.ndarray = None
    out_cache: tuple = None
    local: np.ndarray = None
    pooled: np.ndarray = None
    argmax: np.ndarray = None


def init_params(cfg: NetConfig = NetConfig(), seed: int = 0, dtype=np.float32) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore("p3d")
    width = cfg.input_channels
    for i, w in enumerate(cfg.local_widths):
        L.add_linear(store, f"local{i}", width, w, rng, dtype)
        L.add_batchnorm(store, f"local{i}.bn", w, dtype)
        width = w
    local_width = width
    for i, w in enumerate(cfg.global_widths):
        L.add_linear(store, f"global{i}", width, w, rng, dtype)
        L.add_batchnorm(store, f"global{i}.bn", w, dtype)
        width = w
    width = local_width + cfg.global_widths[-1]
    for i, w in enumerate(cfg.head_widths):
        L.add_linear(store, f"head{i}", width, w, rng, dtype)
        L.add_batchnorm(store, f"head{i}.bn", w, dtype)
        width = w
    if cfg.zero_global_head:
        store["head0.weight"][:, local_width:] = 0
    L.add_linear(store, "out", width, cfg.out_channels, rng, dtype)
    return store


def forward(points: np.ndarray, params: ParamStore, cfg: NetConfig = NetConfig(),
            train: bool | None = None, update_stats: bool = True):
    """Per-point features ``(N, out_channels)`` and the cache for :func:`backward`."""
    if train is None:
        train = cfg.mode == "train"
    x = np.asarray(points, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != cfg.input_channels:
        raise ValueError(f"expected (N, {cfg.input_channels}) input, got {x.shape}")
    if len(x) == 0:
        raise ValueError("global max-pool needs at least one point")
    cache = ForwardCache(train=train, signature=params.shapes())

    h = x
    for i in range(len(cfg.local_widths)):
        h, c = L.dense_block_forward(h, params, f"local{i}", train, update_stats)
        cache.local_caches.append(c)
    local = h
    g = local
    for i in range(len(cfg.global_widths)):
        g, c = L.dense_block_forward(g, params, f"global{i}", train, update_stats)
        cache.global_caches.append(c)
    argmax = g.argmax(axis=0)
    pooled = g[argmax, np.arange(g.shape[1])]

    # the first head layer sees [local | pooled]; the pooled half is shared
    # by every point, so it is applied once
    w0 = params["head0.weight"]
    k = local.shape[1]
    z = local @ w0[:, :k].T + (pooled @ w0[:, k:].T + params["head0.bias"])
    y, cache.head0_bn = L.batchnorm_forward(z, params, "head0.bn", train, update_stats)
    h, cache.head0_mask = L.relu_forward(y)
    for i in range(1, len(cfg.head_widths)):
        h, c = L.dense_block_forward(h, params, f"head{i}", train, update_stats)
        cache.head_caches.append(c)
    out, cache.out_cache = L.linear_forward(h, params, "out")
    cache.local, cache.pooled, cache.argmax = local, pooled, argmax
    return out, cache


def global_feature(points: np.ndarray, params: ParamStore, cfg: NetConfig = NetConfig(),
                   train: bool = False) -> np.ndarray:
    """The max-pooled descriptor alone (no running-stat update)."""
    _, cache = forward(points, params, cfg, train=train, update_stats=False)
    return cache.pooled


def backward(grad_features: np.ndarray, cache: ForwardCache, params: ParamStore) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient w.r.t. the input points.

    Gradient through the max-pool goes to the argmax point of each channel
    (lowest index on ties).
    """
    if params.shapes() != cache.signature:
        raise ValueError("cache was produced with a different parameter layout")
    d = L.linear_backward(np.asarray(grad_features, dtype=params.dtype),
                          cache.out_cache, params)
    for c in reversed(cache.head_caches):
        d = L.dense_block_backward(d, c, params)
    dz = L.batchnorm_backward(L.relu_backward(d, cache.head0_mask), cache.head0_bn, params)
    w0 = params["head0.weight"]
    k = cache.local.shape[1]
    dz_sum = dz.sum(axis=0)
    params.accumulate("head0.weight",
                      np.concatenate([dz.T @ cache.local, np.outer(dz_sum, cache.pooled)],
                                     axis=1))
    params.accumulate("head0.bias", dz_sum)
    d_local = dz @ w0[:, :k]
    d_pooled = dz_sum @ w0[:, k:]

    n = cache.local.shape[0]
    c = len(cache.argmax)
    dg = np.zeros((n, c), dtype=d_local.dtype)
    dg[cache.argmax, np.arange(c)] = d_pooled
    for cc in reversed(cache.global_caches):
        dg = L.dense_block_backward(dg, cc, params)
    d = d_local + dg
    for cc in reversed(cache.local_caches):
        d = L.dense_block_backward(d, cc, params)
    return d

"""Sparse per-pixel feature maps and the pixel-wise RGB/feature merge layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .geometry import Projections
from .params import ParamStore

NO_SOURCE = -1
MERGE_CHANNELS = 64
MERGE_MODES = ("local", "padding")


@dataclass
class SparseFeatureMap:
    values: np.ndarray  # (H, W, C)
    occupied: np.ndarray  # (H, W) bool
    source_index: np.ndarray  # (H, W) int64, NO_SOURCE where unoccupied
    source_depth: np.ndarray  # (H, W), +inf where unoccupied

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def empty(cls, height: int, width: int, channels: int = 61, dtype=np.float32):
        return cls(np.zeros((height, width, channels), dtype=dtype),
                   np.zeros((height, width), dtype=bool),
                   np.full((height, width), NO_SOURCE, dtype=np.int64),
                   np.full((height, width), np.inf))


def assign_pixels(visible: np.ndarray, proj: Projections, height: int, width: int):
    """Z-buffer assignment of points to pixels.

    Returns ``(source_index, source_depth)`` maps: each pixel keeps the
    nearest visible in-bounds point, lowest index on equal depth.
    """
    src = np.full(height * width, NO_SOURCE, dtype=np.int64)
    dep = np.full(height * width, np.inf)
    cand = np.flatnonzero(np.asarray(visible, dtype=bool) & proj.in_bounds)
    if cand.size:
        flat = proj.row[cand] * width + proj.col[cand]
        order = np.lexsort((cand, proj.depth[cand], flat))
        flat_sorted = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        winners = cand[order[first]]
        src[flat_sorted[first]] = winners
        dep[flat_sorted[first]] = proj.depth[winners]
    return src.reshape(height, width), dep.reshape(height, width)


def scatter_features(features: np.ndarray, visible: np.ndarray, proj: Projections,
                     height: int, width: int) -> SparseFeatureMap:
    """Write each visible point's feature row at its pixel (nearest point wins)."""
    features = np.asarray(features)
    if not (len(features) == len(visible) == len(proj)):
        raise ValueError("features, visibility mask and projections disagree in length")
    src, dep = assign_pixels(visible, proj, height, width)
    return gather_features(features, src, dep)


def gather_features(features: np.ndarray, source_index: np.ndarray,
                    source_depth: np.ndarray) -> SparseFeatureMap:
    """Build the map from a precomputed pixel -> point assignment."""
    h, w = source_index.shape
    occupied = source_index != NO_SOURCE
    values = np.zeros((h, w, features.shape[1]), dtype=features.dtype)
    values[occupied] = features[source_index[occupied]]
    return SparseFeatureMap(values, occupied, source_index, source_depth)


def scatter_backward(d_values: np.ndarray, fmap: SparseFeatureMap, num_points: int) -> np.ndarray:
    """Route map gradients back to the winning points; all others get zero."""
    grad = np.zeros((num_points, d_values.shape[-1]), dtype=d_values.dtype)
    occ = fmap.occupied
    np.add.at(grad, fmap.source_index[occ], d_values[occ])
    return grad


# -- merge ------------------------------------------------------------------

def init_merge_params(store: ParamStore, base_channels: int = 3, feature_channels: int = 61,
                      rng: np.random.Generator | None = None, prefix: str = "",
                      dtype=np.float32) -> ParamStore:
    """Register ``fused`` (features+base -> 64), ``base`` (base -> 64) and a shared BN."""
    rng = rng if rng is not None else np.random.default_rng(0)
    L.add_linear(store, f"{prefix}fused", feature_channels + base_channels,
                 MERGE_CHANNELS, rng, dtype)
    L.add_linear(store, f"{prefix}base", base_channels, MERGE_CHANNELS, rng, dtype)
    L.add_batchnorm(store, f"{prefix}bn", MERGE_CHANNELS, dtype)
    return store


@dataclass
class MergeCache:
    shape: tuple
    mode: str
    prefix: str
    occ: np.ndarray  # flat occupancy used for routing
    inputs_fused: np.ndarray
    base_plain: np.ndarray
    bn: tuple
    mask: np.ndarray
    feature_channels: int


def merge(base: np.ndarray, fmap: SparseFeatureMap, params: ParamStore,
          mode: str = "local", train: bool = True, prefix: str = "",
          update_stats: bool = True):
    """Pixel-wise fusion of a base image (RGB, or decoder features) with a feature map.

    ``local``: occupied pixels go through ``fused`` on ``[features | base]``,
    the rest through ``base``. ``padding``: every pixel goes through
    ``fused`` with zeros standing in for missing features. One batch norm
    over all pixels, then ReLU. Returns ``(H, W, 64)`` and a cache.
    """
    if mode not in MERGE_MODES:
        raise ValueError(f"merge mode must be one of {MERGE_MODES}")
    h, w, k = base.shape
    if fmap.shape != (h, w):
        raise ValueError(f"feature map is {fmap.shape}, image is {(h, w)}")
    wf = params[f"{prefix}fused.weight"]
    if wf.shape[1] != fmap.channels + k:
        raise ValueError("merge weights do not match the input channel counts")
    dtype = params.dtype
    base2 = base.reshape(h * w, k).astype(dtype, copy=False)
    feat2 = fmap.values.reshape(h * w, -1).astype(dtype, copy=False)
    if mode == "padding":
        occ = np.ones(h * w, dtype=bool)
    else:
        occ = fmap.occupied.reshape(-1)
    # unoccupied feature rows are zero, so the padded input is just the concat
    fused_in = np.concatenate([feat2[occ], base2[occ]], axis=1)
    plain_in = base2[~occ]
    z = np.empty((h * w, MERGE_CHANNELS), dtype=dtype)
    z[occ] = fused_in @ wf.T + params[f"{prefix}fused.bias"]
    z[~occ] = plain_in @ params[f"{prefix}base.weight"].T + params[f"{prefix}base.bias"]
    y, bn = L.batchnorm_forward(z, params, f"{prefix}bn", train, update_stats)
    a, mask = L.relu_forward(y)
    cache = MergeCache((h, w, k), mode, prefix, occ, fused_in, plain_in, bn, mask,
                       fmap.channels)
    return a.reshape(h, w, MERGE_CHANNELS), cache


def merge_backward(d_out: np.ndarray, cache: MergeCache, params: ParamStore):
    """Returns ``(d_base, d_feature_values)``, both image-shaped."""
    h, w, k = cache.shape
    p = cache.prefix
    dy = L.relu_backward(d_out.reshape(h * w, MERGE_CHANNELS), cache.mask)
    dz = L.batchnorm_backward(dy, cache.bn, params)
    occ = cache.occ
    dz_f, dz_b = dz[occ], dz[~occ]
    wf = params[f"{p}fused.weight"]
    wb = params[f"{p}base.weight"]
    params.accumulate(f"{p}fused.weight", dz_f.T @ cache.inputs_fused)
    params.accumulate(f"{p}fused.bias", dz_f.sum(axis=0))
    params.accumulate(f"{p}base.weight", dz_b.T @ cache.base_plain)
    params.accumulate(f"{p}base.bias", dz_b.sum(axis=0))
    c = cache.feature_channels
    d_in = dz_f @ wf
    d_base = np.empty((h * w, k), dtype=dz.dtype)
    d_base[occ] = d_in[:, c:]
    d_base[~occ] = dz_b @ wb
    d_feat = np.zeros((h * w, c), dtype=dz.dtype)
    d_feat[occ] = d_in[:, :c]
    return d_base.reshape(h, w, k), d_feat.reshape(h, w, c)

"""Compact encoder-decoder segmentation network (U-Net shaped, three scales).

Encoder block ``i``: 3x3 conv -> BN -> ReLU (kept as skip) -> 2x2 max-pool.
Decoder block ``i``: nearest 2x upsample, concat the matching skip,
3x3 conv -> BN -> ReLU. A final 1x1 conv yields class logits at input size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .params import ParamStore


@dataclass(frozen=True)
class SegHeadConfig:
    widths: tuple = (64, 128, 128)
    in_channels: int = 64
    num_classes: int = 5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError("seg head needs three positive encoder widths")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    @property
    def feature_channels(self) -> int:
        return self.widths[0]


def _decoder_plan(widths):
    e0, e1, e2 = widths
    # (name, upsampled channels, skip channels, out channels), deepest first
    return [("dec2", e2, e2, e1), ("dec1", e1, e1, e0), ("dec0", e0, e0, e0)]


def init_seg_params(cfg: SegHeadConfig, seed: int = 0, dtype=np.float32,
                    store: ParamStore | None = None,
                    classifier_in: int | None = None) -> ParamStore:
    """``classifier_in`` overrides the classifier input width (late merge feeds it 64)."""
    rng = np.random.default_rng(seed)
    store = store if store is not None else ParamStore("seg")
    c = cfg.in_channels
    for i, w in enumerate(cfg.widths):
        L.add_conv(store, f"enc{i}", 3, c, w, rng, dtype)
        L.add_batchnorm(store, f"enc{i}.bn", w, dtype)
        c = w
    for name, up, skip, out in _decoder_plan(cfg.widths):
        L.add_conv(store, name, 3, up + skip, out, rng, dtype)
        L.add_batchnorm(store, f"{name}.bn", out, dtype)
    L.add_linear(store, "cls", classifier_in or cfg.widths[0], cfg.num_classes, rng, dtype)
    return store


def check_size(height: int, width: int) -> None:
    if height % 8 or width % 8:
        raise ValueError(f"image size {height}x{width} must be divisible by 8")


def body_forward(x: np.ndarray, params: ParamStore, train: bool = True,
                 update_stats: bool = True):
    """Encoder-decoder trunk: ``(H, W, C_in) -> (H, W, widths[0])``."""
    h, w, _ = x.shape
    check_size(h, w)
    x = x.astype(params.dtype, copy=False)
    enc_caches, pool_caches, skips = [], [], []
    for i in range(3):
        x, c = L.conv_block_forward(x, params, f"enc{i}", train, update_stats)
        enc_caches.append(c)
        skips.append(x)
        x, pc = L.maxpool2_forward(x)
        pool_caches.append(pc)
    dec_caches = []
    for name, s in zip(("dec2", "dec1", "dec0"), reversed(skips)):
        up = x.shape[-1]
        x = np.concatenate([L.upsample2_forward(x), s], axis=-1)
        x, c = L.conv_block_forward(x, params, name, train, update_stats)
        dec_caches.append((c, up))
    return x, (enc_caches, pool_caches, dec_caches)


def body_backward(d: np.ndarray, cache, params: ParamStore) -> np.ndarray:
    enc_caches, pool_caches, dec_caches = cache
    d_skips = []
    for c, up in reversed(dec_caches):
        dcat = L.conv_block_backward(d, c, params)
        d_skips.append(dcat[..., up:])
        d = L.upsample2_backward(dcat[..., :up])
    # d_skips is ordered shallowest first now
    for i in reversed(range(3)):
        d = L.maxpool2_backward(d, pool_caches[i]) + d_skips[i]
        d = L.conv_block_backward(d, enc_caches[i], params)
    return d


def classifier_forward(feat: np.ndarray, params: ParamStore):
    h, w, c = feat.shape
    logits, cache = L.linear_forward(feat.reshape(h * w, c), params, "cls")
    return logits.reshape(h, w, -1), (cache, feat.shape)


def classifier_backward(d_logits: np.ndarray, cache, params: ParamStore) -> np.ndarray:
    lin, shape = cache
    h, w, _ = shape
    return L.linear_backward(d_logits.reshape(h * w, -1), lin, params).reshape(shape)


def seg_forward(image: np.ndarray, params: ParamStore, train: bool = True,
                update_stats: bool = True):
    """Per-pixel logits ``(H, W, num_classes)`` for a ``(H, W, C_in)`` image."""
    feat, body = body_forward(image, params, train, update_stats)
    logits, cls = classifier_forward(feat, params)
    return logits, (body, cls)


def seg_backward(d_logits: np.ndarray, cache, params: ParamStore) -> np.ndarray:
    body, cls = cache
    return body_backward(classifier_backward(d_logits, cls, params), body, params)

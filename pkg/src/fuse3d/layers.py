"""Forward/backward primitives shared by the point encoder, merge layer and seg head.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache, accumulates parameter gradients
into the :class:`ParamStore` and returns the input gradient. Images are
channels-last ``(H, W, C)``.
"""

from __future__ import annotations

import numpy as np

from .params import ParamStore

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def add_linear(store: ParamStore, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator, dtype=np.float32) -> None:
    s = glorot_bound(fan_in, fan_out)
    store.add(f"{name}.weight", rng.uniform(-s, s, size=(fan_out, fan_in)).astype(dtype))
    store.add(f"{name}.bias", np.zeros(fan_out, dtype=dtype))


def add_conv(store: ParamStore, name: str, k: int, c_in: int, c_out: int,
             rng: np.random.Generator, dtype=np.float32) -> None:
    s = glorot_bound(k * k * c_in, k * k * c_out)
    store.add(f"{name}.weight", rng.uniform(-s, s, size=(k, k, c_in, c_out)).astype(dtype))
    store.add(f"{name}.bias", np.zeros(c_out, dtype=dtype))


def add_batchnorm(store: ParamStore, name: str, channels: int, dtype=np.float32) -> None:
    store.add(f"{name}.gamma", np.ones(channels, dtype=dtype))
    store.add(f"{name}.beta", np.zeros(channels, dtype=dtype))
    store.add(f"{name}.mean", np.zeros(channels, dtype=dtype), buffer=True)
    store.add(f"{name}.var", np.ones(channels, dtype=dtype), buffer=True)


# -- linear ---------------------------------------------------------------

def linear_forward(x, store, name):
    w = store[f"{name}.weight"]
    return x @ w.T + store[f"{name}.bias"], (x, name)


def linear_backward(dy, cache, store):
    x, name = cache
    store.accumulate(f"{name}.weight", dy.T @ x)
    store.accumulate(f"{name}.bias", dy.sum(axis=0))
    return dy @ store[f"{name}.weight"]


# -- batch norm over rows -------------------------------------------------

def batchnorm_forward(x, store, name, train: bool, update_stats: bool = True):
    """Normalize each column of a ``(M, C)`` array.

    Train mode uses the batch mean and biased variance and, when
    ``update_stats`` is set, moves the running statistics toward them
    (running variance gets the unbiased estimate).
    """
    gamma = store[f"{name}.gamma"]
    beta = store[f"{name}.beta"]
    if train:
        mu = x.mean(axis=0)
        xhat = x - mu
        var = np.square(xhat).mean(axis=0)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        if update_stats:
            m = len(x)
            unbiased = var * (m / (m - 1)) if m > 1 else var
            rm, rv = store[f"{name}.mean"], store[f"{name}.var"]
            rm *= 1.0 - BN_MOMENTUM
            rm += BN_MOMENTUM * mu
            rv *= 1.0 - BN_MOMENTUM
            rv += BN_MOMENTUM * unbiased
    else:
        xhat = x - store[f"{name}.mean"]
        inv = 1.0 / np.sqrt(store[f"{name}.var"] + BN_EPS)
    xhat *= inv
    y = xhat * gamma
    y += beta
    return y, (xhat, inv, train, name)


def batchnorm_backward(dy, cache, store):
    xhat, inv, train, name = cache
    gamma = store[f"{name}.gamma"]
    d_gamma = (dy * xhat).sum(axis=0)
    d_beta = dy.sum(axis=0)
    store.accumulate(f"{name}.gamma", d_gamma)
    store.accumulate(f"{name}.beta", d_beta)
    scale = gamma * inv
    if not train:
        return dy * scale
    m = len(dy)
    dx = xhat * (d_gamma / m)
    np.subtract(dy, dx, out=dx)
    dx -= d_beta / m
    dx *= scale
    return dx


# -- relu -----------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return np.maximum(x, 0, out=x), mask


def relu_backward(dy, mask):
    return dy * mask


# -- dense block: linear -> BN -> ReLU ------------------------------------

def dense_block_forward(x, store, name, train, update_stats=True):
    z, c_lin = linear_forward(x, store, name)
    y, c_bn = batchnorm_forward(z, store, f"{name}.bn", train, update_stats)
    a, mask = relu_forward(y)
    return a, (c_lin, c_bn, mask)


def dense_block_backward(da, cache, store):
    c_lin, c_bn, mask = cache
    dy = relu_backward(da, mask)
    dz = batchnorm_backward(dy, c_bn, store)
    return linear_backward(dz, c_lin, store)


# -- 3x3 convolution, zero padding ----------------------------------------
#
# The padded image is flattened with two extra columns per row so that each
# of the nine kernel taps reads one contiguous slice; the two junk columns
# of the result are dropped afterwards. No im2col copy is made.

def _pad_flat(x):
    h, w, c = x.shape
    xp = np.zeros((h + 3, w + 2, c), dtype=x.dtype)
    xp[1:h + 1, 1:w + 1] = x
    return xp.reshape(-1, c)


def _tap_offsets(w):
    return [i * (w + 2) + j for i in range(3) for j in range(3)]


def _shifted_conv(flat, kernel, h, w):
    n = h * (w + 2)
    taps = kernel.reshape(9, kernel.shape[2], kernel.shape[3])
    out = None
    for k, o in enumerate(_tap_offsets(w)):
        t = flat[o:o + n] @ taps[k]
        if out is None:
            out = t
        else:
            out += t
    return out.reshape(h, w + 2, -1)[:, :w]


def conv3x3_forward(x, store, name):
    h, w, _ = x.shape
    flat = _pad_flat(x)
    y = _shifted_conv(flat, store[f"{name}.weight"], h, w) + store[f"{name}.bias"]
    return y, (flat, x.shape, name)


def conv3x3_backward(dy, cache, store):
    flat, (h, w, c_in), name = cache
    weight = store[f"{name}.weight"]
    c_out = weight.shape[-1]
    grid = np.zeros((h, w + 2, c_out), dtype=dy.dtype)
    grid[:, :w] = dy
    grid = grid.reshape(-1, c_out)
    n = h * (w + 2)
    dw = np.empty((9, c_in, c_out), dtype=weight.dtype)
    for k, o in enumerate(_tap_offsets(w)):
        dw[k] = flat[o:o + n].T @ grid
    store.accumulate(f"{name}.weight", dw.reshape(weight.shape))
    store.accumulate(f"{name}.bias", dy.reshape(-1, c_out).sum(axis=0))
    # input gradient: 3x3 convolution of dy with the flipped, transposed kernel
    flipped = np.ascontiguousarray(weight[::-1, ::-1].transpose(0, 1, 3, 2))
    return _shifted_conv(_pad_flat(dy), flipped, h, w)


def conv_block_forward(x, store, name, train, update_stats=True):
    """3x3 conv -> BN over all pixels -> ReLU."""
    h, w, _ = x.shape
    z, c_conv = conv3x3_forward(x, store, name)
    c = z.shape[-1]
    y, c_bn = batchnorm_forward(z.reshape(h * w, c), store, f"{name}.bn", train,
                                update_stats)
    a, mask = relu_forward(y)
    return a.reshape(h, w, c), (c_conv, c_bn, mask)


def conv_block_backward(da, cache, store):
    c_conv, c_bn, mask = cache
    h, w, c = da.shape
    dy = relu_backward(da.reshape(h * w, c), mask)
    dz = batchnorm_backward(dy, c_bn, store)
    return conv3x3_backward(dz.reshape(h, w, c), c_conv, store)


# -- pooling / upsampling -------------------------------------------------

def maxpool2_forward(x):
    quads = (x[0::2, 0::2], x[0::2, 1::2], x[1::2, 0::2], x[1::2, 1::2])
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    # index of the first quadrant attaining the max (row-major within the window)
    arg = np.where(quads[0] == out, 0,
                   np.where(quads[1] == out, 1, np.where(quads[2] == out, 2, 3)))
    return out, (arg.astype(np.uint8), x.shape)


def maxpool2_backward(dy, cache):
    arg, shape = cache
    dx = np.zeros(shape, dtype=dy.dtype)
    for k, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[i::2, j::2] = dy * (arg == k)
    return dx


def upsample2_forward(x):
    return x.repeat(2, axis=0).repeat(2, axis=1)


def upsample2_backward(dy):
    h, w, c = dy.shape
    return dy.reshape(h // 2, 2, w // 2, 2, c).sum(axis=(1, 3))

"""False-color rendering of sparse feature maps via PCA."""

from __future__ import annotations

import numpy as np

from .fusion import SparseFeatureMap


def _pca(x: np.ndarray):
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    # numerically zero singular values mark degenerate directions
    tol = (s[0] if s.size else 0.0) * max(xc.shape) * np.finfo(np.float64).eps
    return xc, s, vt, tol


def export_feature_pca(fmap: SparseFeatureMap) -> np.ndarray:
    """``(H, W, 3)`` image in [0, 1] from the top three principal components.

    Each channel is min-max scaled over the occupied pixels; a component
    with no variance renders as 0.5. Unoccupied pixels are black.
    """
    occ = fmap.occupied
    if int(occ.sum()) < 3:
        raise ValueError("PCA export needs at least 3 occupied pixels")
    x = fmap.values[occ].astype(np.float64)
    xc, s, vt, tol = _pca(x)
    h, w = occ.shape
    out = np.zeros((h, w, 3))
    chans = np.full((len(x), 3), 0.5)
    for k in range(min(3, len(s))):
        if s[k] <= tol or s[k] == 0.0:
            continue
        v = vt[k]
        # fixed sign: largest-magnitude loading positive
        v = v if v[np.argmax(np.abs(v))] > 0 else -v
        p = xc @ v
        lo, hi = p.min(), p.max()
        if hi - lo > 0:
            chans[:, k] = (p - lo) / (hi - lo)
    out[occ] = chans
    return out


def explained_variance(fmap: SparseFeatureMap, k: int = 3) -> float:
    """Fraction of the occupied-pixel feature variance captured by the top ``k`` components."""
    x = fmap.values[fmap.occupied].astype(np.float64)
    _, s, _, _ = _pca(x)
    total = float(np.sum(s ** 2))
    return float(np.sum(s[:k] ** 2) / total) if total > 0 else 1.0

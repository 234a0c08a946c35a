import numpy as np
import pytest

from fuse3d.fusion import SparseFeatureMap
from fuse3d.visualize import explained_variance, export_feature_pca


def fmap_from(values, occupied):
    h, w = occupied.shape
    src = np.where(occupied, np.arange(h * w).reshape(h, w), -1)
    return SparseFeatureMap(np.where(occupied[..., None], values, 0), occupied, src,
                            np.where(occupied, 1.0, np.inf))


def test_range_and_black_background():
    rng = np.random.default_rng(0)
    occ = rng.random((8, 8)) < 0.5
    img = export_feature_pca(fmap_from(rng.normal(size=(8, 8, 61)), occ))
    assert img.shape == (8, 8, 3)
    assert img.min() >= 0 and img.max() <= 1
    assert not img[~occ].any()
    assert np.isclose(img[occ].min(axis=0), 0).all() and np.isclose(img[occ].max(axis=0), 1).all()


def test_constant_features_render_grey():
    occ = np.ones((4, 4), bool)
    img = export_feature_pca(fmap_from(np.ones((4, 4, 61)), occ))
    assert np.all(img == 0.5)


def test_rank_one_features():
    rng = np.random.default_rng(1)
    occ = np.ones((4, 4), bool)
    vals = rng.normal(size=(4, 4, 1)) * rng.normal(size=61)
    img = export_feature_pca(fmap_from(vals, occ))
    assert np.all(img[..., 1:] == 0.5)
    assert explained_variance(fmap_from(vals, occ), 1) == pytest.approx(1.0)


def test_deterministic():
    rng = np.random.default_rng(2)
    occ = np.ones((6, 6), bool)
    vals = rng.normal(size=(6, 6, 61))
    a = export_feature_pca(fmap_from(vals, occ))
    b = export_feature_pca(fmap_from(vals.copy(), occ))
    np.testing.assert_array_equal(a, b)


def test_too_few_pixels():
    occ = np.zeros((4, 4), bool)
    occ[0, :2] = True
    with pytest.raises(ValueError):
        export_feature_pca(fmap_from(np.ones((4, 4, 61)), occ))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fuse3d.geometry import PointCloud
from fuse3d.sampling import SamplingConfig, poisson_downsample, radius_context
from oracles import pairwise_min_distance


def dist_matrix(p):
    return np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(-1))


class TestPoisson:
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.6))
    @settings(max_examples=30, deadline=None)
    def test_separation_and_maximality(self, seed, radius):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 2, (300, 3))
        kept = poisson_downsample(PointCloud(pts), radius, seed)
        assert pairwise_min_distance(pts[kept]) >= radius
        d = dist_matrix(pts)[:, kept]
        rejected = np.setdiff1d(np.arange(len(pts)), kept)
        assert np.all(d[rejected].min(axis=1) < radius)

    def test_sorted_output_and_determinism(self):
        cloud = PointCloud(np.random.default_rng(0).uniform(0, 1, (500, 3)))
        a = poisson_downsample(cloud, 0.1, 3)
        assert np.all(np.diff(a) > 0)
        np.testing.assert_array_equal(a, poisson_downsample(cloud, 0.1, 3))
        assert not np.array_equal(a, poisson_downsample(cloud, 0.1, 4))

    def test_duplicates_collapse(self):
        cloud = PointCloud(np.zeros((10, 3)))
        assert len(poisson_downsample(cloud, 0.01)) == 1

    def test_exact_radius_is_allowed(self):
        cloud = PointCloud([[0, 0, 0], [1.0, 0, 0]])
        assert poisson_downsample(cloud, 1.0).tolist() == [0, 1]

    def test_empty(self):
        assert poisson_downsample(PointCloud(np.zeros((0, 3))), 0.1).size == 0

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            poisson_downsample(PointCloud(np.zeros((1, 3))), 0.0)
        with pytest.raises(ValueError):
            SamplingConfig(poisson_radius=-1)


class TestRadiusContext:
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_matches_brute_force(self, seed, radius):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, (200, 3))
        anchors = rng.choice(200, size=int(rng.integers(0, 20)), replace=False)
        got = radius_context(PointCloud(pts), anchors, radius)
        if anchors.size:
            near = (dist_matrix(pts)[:, anchors] <= radius).any(axis=1)
        else:
            near = np.zeros(200, bool)
        near[anchors] = True
        np.testing.assert_array_equal(got, np.flatnonzero(near))

    def test_out_of_range_anchor(self):
        with pytest.raises(IndexError):
            radius_context(PointCloud(np.zeros((3, 3))), [5], 1.0)

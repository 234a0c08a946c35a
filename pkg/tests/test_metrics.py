import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fuse3d.metrics import confusion_matrix, cross_entropy, metrics_from_confusion, miou
from oracles import confusion, iou_from_confusion, numeric_grad


class TestCrossEntropy:
    def test_uniform(self):
        loss, _ = cross_entropy(np.zeros((2, 3, 4)), np.zeros((2, 3), int))
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_saturated(self):
        logits = np.zeros((1, 2, 3))
        logits[0, 0, 1] = logits[0, 1, 2] = 100.0
        loss, _ = cross_entropy(logits, np.array([[1, 2]]))
        assert loss < 1e-30

    def test_ignored_pixels_zero_gradient(self):
        rng = np.random.default_rng(0)
        labels = np.array([[0, 255], [1, 2]])
        _, g = cross_entropy(rng.normal(size=(2, 2, 3)), labels)
        assert not g[0, 1].any()

    def test_all_ignored_warns(self):
        with pytest.warns(RuntimeWarning):
            loss, g = cross_entropy(np.ones((2, 2, 3)), np.full((2, 2), 255))
        assert loss == 0.0 and not g.any()

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((1, 1, 3)), np.array([[3]]))

    def test_finite_differences(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(4, 4, 5))
        labels = rng.integers(0, 5, (4, 4))
        labels[0, 0] = 255
        _, g = cross_entropy(logits, labels)
        num = numeric_grad(lambda: cross_entropy(logits, labels)[0], logits, h=1e-6)
        np.testing.assert_allclose(g, num, rtol=1e-8, atol=1e-9)


class TestMiou:
    def test_perfect(self):
        gt = np.random.default_rng(0).integers(0, 4, (5, 5))
        assert miou(gt, gt, 4).miou == 1.0

    def test_one_third(self):
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [0, 1]])
        m = miou(pred, gt, 2)
        assert abs(m.miou - 1 / 3) <= 1e-12
        np.testing.assert_allclose(m.per_class_iou, [1 / 3, 1 / 3], atol=1e-12, rtol=0)

    def test_absent_class_excluded(self):
        gt = np.array([[0, 1]])
        m = miou(gt, gt, 3)
        assert np.isnan(m.per_class_iou[2])
        assert m.miou == 1.0
        assert m.defined.tolist() == [True, True, False]

    def test_ignore_excluded(self):
        gt = np.array([[0, 255]])
        pred = np.array([[0, 1]])
        assert miou(pred, gt, 2).miou == 1.0

    def test_invalid_prediction(self):
        with pytest.raises(ValueError):
            confusion_matrix(np.array([5]), np.array([0]), 2)

    def test_aggregate_differs_from_mean_of_images(self):
        a = miou(np.array([[0, 0]]), np.array([[0, 1]]), 2)
        b = miou(np.array([[1, 1]]), np.array([[1, 1]]), 2)
        pooled = metrics_from_confusion(
            confusion_matrix(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), 2))
        assert pooled.miou == pytest.approx(7 / 12, abs=1e-12)
        assert pooled.miou != pytest.approx((a.miou + b.miou) / 2)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
    @settings(max_examples=50, deadline=None)
    def test_matches_oracle(self, seed, c):
        rng = np.random.default_rng(seed)
        gt = rng.integers(0, c, (6, 7))
        gt[rng.random((6, 7)) < 0.1] = 255
        pred = rng.integers(0, c, (6, 7))
        cm = confusion(pred, gt, c)
        np.testing.assert_array_equal(confusion_matrix(pred, gt, c), cm)
        ious, mean = iou_from_confusion(cm)
        m = miou(pred, gt, c)
        np.testing.assert_allclose(m.per_class_iou, ious, rtol=0, atol=1e-12)
        if math.isnan(mean):
            assert math.isnan(m.miou)
        else:
            assert abs(m.miou - mean) <= 1e-12
            assert 0 <= m.miou <= 1

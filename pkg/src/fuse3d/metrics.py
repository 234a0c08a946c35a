"""Pixel-wise cross-entropy and intersection-over-union."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

IGNORE_ID = 255


def cross_entropy(logits: np.ndarray, labels: np.ndarray, ignore_id: int = IGNORE_ID):
    """Mean ``-log softmax`` over non-ignored pixels and its gradient.

    Returns ``(loss, grad_logits)``. When every pixel is ignored the loss is
    0 with a zero gradient and a ``RuntimeWarning`` is emitted.
    """
    h, w, c = logits.shape
    z = logits.reshape(-1, c)
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != z.shape[0]:
        raise ValueError("labels and logits disagree in size")
    valid = y != ignore_id
    if np.any(y[valid] >= c) or np.any(y[valid] < 0):
        raise ValueError("label id outside [0, num_classes)")
    grad = np.zeros_like(z)
    count = int(valid.sum())
    if count == 0:
        warnings.warn("all pixels ignored; loss defined as 0", RuntimeWarning)
        return 0.0, grad.reshape(logits.shape)
    zv = z[valid]
    shifted = zv - zv.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1, keepdims=True)
    yv = y[valid]
    log_p = shifted[np.arange(count), yv] - np.log(sum_exp[:, 0])
    loss = float(-log_p.mean())
    g = exp / sum_exp
    g[np.arange(count), yv] -= 1.0
    grad[valid] = g / count
    return loss, grad.reshape(logits.shape)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                     ignore_id: int = IGNORE_ID) -> np.ndarray:
    """``cm[g, p]`` counts non-ignored pixels with ground truth g predicted as p."""
    p = np.asarray(pred).reshape(-1).astype(np.int64)
    g = np.asarray(gt).reshape(-1).astype(np.int64)
    keep = g != ignore_id
    p, g = p[keep], g[keep]
    if p.size and (p.min() < 0 or p.max() >= num_classes or g.max() >= num_classes):
        raise ValueError("class id outside [0, num_classes)")
    return np.bincount(g * num_classes + p, minlength=num_classes ** 2).reshape(
        num_classes, num_classes)


@dataclass(frozen=True)
class Metrics:
    per_class_iou: np.ndarray  # NaN marks an undefined class
    miou: float

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.per_class_iou)


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    iou = np.full(len(tp), np.nan)
    ok = denom > 0
    iou[ok] = tp[ok] / denom[ok]
    miou = float(iou[ok].mean()) if ok.any() else float("nan")
    return Metrics(iou, miou)


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int,
         ignore_id: int = IGNORE_ID) -> Metrics:
    return metrics_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_id))

"""End-to-end finite-difference check of the whole trainable pipeline.

A tiny model (few points, 8x8 image) is run through point encoder, scatter,
merge, seg head and cross-entropy. Analytic gradients from the requested
dtype are compared with central differences of the same function evaluated
in float64 on the same parameter values, so float32 runs measure the error
of the float32 backward pass rather than float32 finite-difference noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .geometry import CameraRig, PointCloud
from .lpointnet import NetConfig
from .metrics import cross_entropy

STEP = 1e-5
# entries sampled per parameter tensor; the 64-wide merge weights dominate
# the count otherwise
MAX_ENTRIES = 256


@dataclass
class GradcheckResult:
    label: str
    dtype: str
    max_rel_error: float
    worst: str
    checked: int


def tiny_view(seed: int = 3, num_points: int = 16, size: int = 8, num_classes: int = 3):
    rng = np.random.default_rng(seed)
    rig = CameraRig(size, size, size / 2, size / 2, size, size)
    pts = np.c_[rng.uniform(-0.9, 0.9, (num_points, 2)), rng.uniform(1.0, 3.0, num_points)]
    pts[:, :2] *= pts[:, 2:3] * 0.5
    rgb = rng.uniform(size=(size, size, 3))
    labels = rng.integers(0, num_classes, (size, size))
    labels[0, 0] = 255
    return M.prepare_view(rgb, labels, PointCloud(pts), rig, theta=2.0)


def tiny_config(stage: str = "early", mode: str = "local", num_classes: int = 3):
    return M.ModelConfig(NetConfig((3,), (3, 4), (4,)), seg_widths=(2, 3, 3),
                         num_classes=num_classes, merge_stage=stage, merge_mode=mode)


def _loss(model, view) -> float:
    logits, _ = M.forward(model, view, train=True, update_stats=False)
    return cross_entropy(logits, view.labels)[0]


def check_model(cfg: M.ModelConfig, view: M.PreparedView,
                dtypes=(np.float32, np.float64), seed: int = 0,
                max_entries: int | None = MAX_ENTRIES) -> list[GradcheckResult]:
    """Max over parameter entries of ``|analytic - fd| / max(1, |fd|)``, per dtype.

    Parameters are drawn once in float32 so every dtype starts from the same
    values and one set of float64 differences serves them all.
    ``max_entries`` samples that many entries per tensor (all when None).
    """
    base = M.init_model(cfg, seed, np.float32)
    analytic = {}
    for dtype in dtypes:
        model = base.astype(np.dtype(dtype))
        M.loss_and_grad(model, _cast_view(view, np.dtype(dtype)), train=True,
                        update_stats=False)
        analytic[np.dtype(dtype).name] = model
    ref = base.astype(np.float64)
    view64 = _cast_view(view, np.float64)
    rng = np.random.default_rng(seed)
    worst = {k: (0.0, "") for k in analytic}
    count = 0
    for group, ref_store in ref.stores.items():
        for name in ref_store.trainable():
            flat = ref_store.values[name].reshape(-1)
            entries = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                entries = np.sort(rng.choice(flat.size, max_entries, replace=False))
            for j in entries:
                orig = flat[j]
                flat[j] = orig + STEP
                lp = _loss(ref, view64)
                flat[j] = orig - STEP
                lm = _loss(ref, view64)
                flat[j] = orig
                fd = (lp - lm) / (2 * STEP)
                count += 1
                for key, model in analytic.items():
                    a = float(model.stores[group].grads[name].reshape(-1)[j])
                    err = abs(a - fd) / max(1.0, abs(fd))
                    if err > worst[key][0]:
                        worst[key] = (err, f"{group}/{name}[{j}]")
    label = f"{cfg.merge_stage}-{cfg.merge_mode}"
    return [GradcheckResult(label, key, err, where, count)
            for key, (err, where) in worst.items()]


def _cast_view(view: M.PreparedView, dtype) -> M.PreparedView:
    return M.PreparedView(view.rgb.astype(dtype), view.labels, view.net_points.astype(dtype),
                          view.source_index, view.source_depth, view.num_fov,
                          view.num_visible, view.coverage, view.key)


def run_suite(dtypes=(np.float32, np.float64), seed: int = 3,
              max_entries: int | None = MAX_ENTRIES) -> list[GradcheckResult]:
    view = tiny_view(seed)
    results = [r for stage in M.MERGE_STAGES for mode in ("local", "padding")
               for r in check_model(tiny_config(stage, mode), view, dtypes,
                                    max_entries=max_entries)]
    return sorted(results, key=lambda r: r.dtype != "float32")


TOLERANCE = {"float32": 1e-4, "float64": 1e-6}

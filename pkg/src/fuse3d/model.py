"""One view through the whole network: point encoder, scatter, merge, seg head.

``prepare_view`` does the parameter-free work (camera transform, frustum,
visibility, pixel assignment) once per view; ``forward``/``backward`` then
run every optimization step on the prepared view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fusion, lpointnet, seghead
from .geometry import CameraRig, PointCloud, frustum_select, project_points, to_camera_frame
from .lpointnet import NetConfig
from .metrics import cross_entropy
from .params import ParamStore
from .seghead import SegHeadConfig
from .visibility import VisibilityConfig, visible_mask

COORDINATE_SYSTEMS = ("camera", "world")
CLOUD_SCOPES = ("visible", "fov")
MERGE_STAGES = ("early", "late")
POINT_STATS = ("view", "running")


@dataclass(frozen=True)
class ModelConfig:
    net: NetConfig = NetConfig()
    seg_widths: tuple = (64, 128, 128)
    num_classes: int = 5
    merge_stage: str = "early"
    merge_mode: str = "local"
    use_3d: bool = True
    # Batch-norm statistics of the point encoder at inference. Training sees
    # one view per step, so every point-encoder BN is normalized by that
    # view's own points; "view" keeps doing so at inference (the whole view
    # is available), "running" uses the accumulated running averages.
    point_stats: str = "view"

    def __post_init__(self):
        if self.merge_stage not in MERGE_STAGES:
            raise ValueError(f"merge_stage must be one of {MERGE_STAGES}")
        if self.merge_mode not in fusion.MERGE_MODES:
            raise ValueError(f"merge_mode must be one of {fusion.MERGE_MODES}")
        if self.point_stats not in POINT_STATS:
            raise ValueError(f"point_stats must be one of {POINT_STATS}")
        if self.net.out_channels != lpointnet.OUT_CHANNELS:
            raise ValueError("the merge layer expects 61 point-feature channels")

    @property
    def seg(self) -> SegHeadConfig:
        return SegHeadConfig(self.seg_widths, fusion.MERGE_CHANNELS, self.num_classes)


@dataclass
class Model:
    cfg: ModelConfig
    p3d: ParamStore
    merge: ParamStore
    seg: ParamStore

    @property
    def stores(self) -> dict[str, ParamStore]:
        return {"p3d": self.p3d, "merge": self.merge, "seg": self.seg}

    def zero_grad(self) -> None:
        for s in self.stores.values():
            s.zero_grad()

    def astype(self, dtype) -> "Model":
        return Model(self.cfg, self.p3d.astype(dtype), self.merge.astype(dtype),
                     self.seg.astype(dtype))


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    p3d = lpointnet.init_params(cfg.net, seed, dtype)
    merge = fusion.init_merge_params(ParamStore("merge"), 3, cfg.net.out_channels,
                                     np.random.default_rng(seed + 1), dtype=dtype)
    if cfg.merge_stage == "late":
        fusion.init_merge_params(merge, cfg.seg.feature_channels, cfg.net.out_channels,
                                 np.random.default_rng(seed + 2), prefix="late.",
                                 dtype=dtype)
    cls_in = fusion.MERGE_CHANNELS if cfg.merge_stage == "late" else None
    seg = seghead.init_seg_params(cfg.seg, seed + 3, dtype, classifier_in=cls_in)
    return Model(cfg, p3d, merge, seg)


@dataclass
class PreparedView:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    labels: np.ndarray  # (H, W) class ids / ignore
    net_points: np.ndarray  # (M, 3) encoder input
    source_index: np.ndarray  # (H, W) row of net_points or -1
    source_depth: np.ndarray  # (H, W)
    num_fov: int = 0
    num_visible: int = 0
    coverage: float = 0.0
    key: str = ""
    extra: dict = field(default_factory=dict)


def prepare_view(rgb: np.ndarray, labels: np.ndarray, cloud: PointCloud, rig: CameraRig,
                 theta: float = 2.0, coordinate_system: str = "camera",
                 cloud_scope: str = "fov", world_origin: np.ndarray | None = None,
                 key: str = "") -> PreparedView:
    """Frustum, visibility and pixel assignment for one view.

    ``world_origin`` re-centers world coordinates (defaults to the cloud
    centroid) when ``coordinate_system == "world"``.
    """
    if coordinate_system not in COORDINATE_SYSTEMS:
        raise ValueError(f"coordinate_system must be one of {COORDINATE_SYSTEMS}")
    if cloud_scope not in CLOUD_SCOPES:
        raise ValueError(f"cloud_scope must be one of {CLOUD_SCOPES}")
    h, w = rig.height, rig.width
    if rgb.shape[:2] != (h, w) or labels.shape != (h, w):
        raise ValueError("image size does not match the camera rig")
    cam = to_camera_frame(cloud, rig)
    fov = frustum_select(cam, rig)
    vis = visible_mask(cam.subset(fov), rig, VisibilityConfig(theta))
    if cloud_scope == "fov":
        net_idx, visible = fov, vis.visible
    else:
        net_idx = fov[vis.visible]
        visible = np.ones(len(net_idx), dtype=bool)
    if coordinate_system == "camera":
        pts = cam.positions[net_idx]
    else:
        origin = cloud.positions.mean(axis=0) if world_origin is None else world_origin
        pts = cloud.positions[net_idx] - origin
    proj = project_points(rig, cam.positions[net_idx])
    src, dep = fusion.assign_pixels(visible, proj, h, w)
    return PreparedView(np.asarray(rgb, dtype=np.float32), np.asarray(labels),
                        pts.astype(np.float32), src, dep, len(fov),
                        int(vis.visible.sum()), vis.coverage, key)


@dataclass
class StepCache:
    fmap: fusion.SparseFeatureMap
    p3d: object = None
    merge: object = None
    seg: object = None
    late_body: object = None
    late_merge: object = None
    late_cls: object = None
    num_points: int = 0


def feature_map(model: Model, view: PreparedView, train: bool, update_stats: bool = True):
    """LPointNet features scattered to pixels, or an empty map when there is no 3D input."""
    h, w = view.labels.shape
    c = model.cfg.net.out_channels
    dtype = model.p3d.dtype
    if not model.cfg.use_3d or len(view.net_points) == 0:
        return fusion.SparseFeatureMap.empty(h, w, c, dtype), None
    if not train and model.cfg.point_stats == "view":
        train, update_stats = True, False
    feats, cache = lpointnet.forward(view.net_points, model.p3d, model.cfg.net, train,
                                     update_stats)
    return fusion.gather_features(feats, view.source_index, view.source_depth), cache


def forward(model: Model, view: PreparedView, train: bool = True, update_stats: bool = True):
    """Logits ``(H, W, C)`` and the step cache."""
    cfg = model.cfg
    fmap, p3d_cache = feature_map(model, view, train, update_stats)
    cache = StepCache(fmap, p3d_cache, num_points=len(view.net_points))
    if cfg.merge_stage == "early":
        img, cache.merge = fusion.merge(view.rgb, fmap, model.merge, cfg.merge_mode, train,
                                        update_stats=update_stats)
        logits, cache.seg = seghead.seg_forward(img, model.seg, train, update_stats)
        return logits, cache
    h, w = fmap.shape
    blank = fusion.SparseFeatureMap.empty(h, w, fmap.channels, fmap.values.dtype)
    img, cache.merge = fusion.merge(view.rgb, blank, model.merge, "local", train,
                                    update_stats=update_stats)
    feat, cache.late_body = seghead.body_forward(img, model.seg, train, update_stats)
    fused, cache.late_merge = fusion.merge(feat, fmap, model.merge, cfg.merge_mode, train,
                                           prefix="late.", update_stats=update_stats)
    logits, cache.late_cls = seghead.classifier_forward(fused, model.seg)
    return logits, cache


def backward(model: Model, d_logits: np.ndarray, cache: StepCache) -> np.ndarray | None:
    """Accumulate gradients of every parameter group; returns d(net_points) or None."""
    if model.cfg.merge_stage == "early":
        d_img = seghead.seg_backward(d_logits, cache.seg, model.seg)
        _, d_feat = fusion.merge_backward(d_img, cache.merge, model.merge)
    else:
        d_fused = seghead.classifier_backward(d_logits, cache.late_cls, model.seg)
        d_body, d_feat = fusion.merge_backward(d_fused, cache.late_merge, model.merge)
        d_img = seghead.body_backward(d_body, cache.late_body, model.seg)
        fusion.merge_backward(d_img, cache.merge, model.merge)
    if cache.p3d is None:
        return None
    d_points = fusion.scatter_backward(d_feat, cache.fmap, cache.num_points)
    return lpointnet.backward(d_points, cache.p3d, model.p3d)


def loss_and_grad(model: Model, view: PreparedView, train: bool = True,
                  update_stats: bool = True) -> float:
    """Forward, cross-entropy and backward for one view; gradients accumulate."""
    logits, cache = forward(model, view, train, update_stats)
    loss, d_logits = cross_entropy(logits, view.labels)
    backward(model, d_logits, cache)
    return loss


def predict(model: Model, view: PreparedView) -> np.ndarray:
    logits, _ = forward(model, view, train=False, update_stats=False)
    return logits.argmax(axis=-1)

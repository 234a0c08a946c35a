"""SGD training of the point encoder, merge layer and seg head, one view per step."""

from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import formats
from .lpointnet import NetConfig
from .metrics import Metrics, confusion_matrix, metrics_from_confusion
from .model import (CLOUD_SCOPES, COORDINATE_SYSTEMS, MERGE_STAGES, Model, ModelConfig,
                    PreparedView, init_model, loss_and_grad, predict, prepare_view)
from .params import ParamStore

LOG_HEADER = ("epoch", "lr", "train_loss", "val_miou", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 40
    halve_every: int = 5
    seed: int = 0
    coordinate_system: str = "camera"
    cloud_scope: str = "fov"
    merge_stage: str = "early"
    merge_mode: str = "local"
    visibility_theta: float = 2.0
    num_classes: int = 5
    use_3d: bool = True
    point_stats: str = "view"
    log_timing: bool = True
    local_widths: tuple = (64, 64)
    global_widths: tuple = (64, 128, 1024)
    head_widths: tuple = (512, 256, 128)
    seg_widths: tuple = (64, 128, 128)

    def __post_init__(self):
        for name in ("local_widths", "global_widths", "head_widths", "seg_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.epochs < 1 or self.halve_every < 1:
            raise ValueError("epochs and halve_every must be at least 1")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must be in [0, 1) and weight_decay >= 0")
        if self.coordinate_system not in COORDINATE_SYSTEMS:
            raise ValueError(f"coordinate_system must be one of {COORDINATE_SYSTEMS}")
        if self.cloud_scope not in CLOUD_SCOPES:
            raise ValueError(f"cloud_scope must be one of {CLOUD_SCOPES}")
        if self.merge_stage not in MERGE_STAGES:
            raise ValueError(f"merge_stage must be one of {MERGE_STAGES}")
        if self.merge_mode not in ("local", "padding"):
            raise ValueError("merge_mode must be 'local' or 'padding'")
        if not 0 <= self.visibility_theta < 90:
            raise ValueError("visibility_theta must be in [0, 90) degrees")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.point_stats not in ("view", "running"):
            raise ValueError("point_stats must be 'view' or 'running'")

    def model_config(self) -> ModelConfig:
        net = NetConfig(self.local_widths, self.global_widths, self.head_widths)
        return ModelConfig(net, self.seg_widths, self.num_classes, self.merge_stage,
                           self.merge_mode, self.use_3d, self.point_stats)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 / 2 ** (epoch // cfg.halve_every)


def sgd_step(stores: Sequence[ParamStore] | ParamStore, lr: float, momentum: float,
             weight_decay: float) -> None:
    """Momentum SGD with L2 decay folded into the gradient; zeroes gradients afterwards.

    Buffers (batch-norm running statistics) are left alone.
    """
    if isinstance(stores, ParamStore):
        stores = [stores]
    for store in stores:
        for name in store.trainable():
            p = store.values[name]
            g = store.grads[name]
            v = store.velocity.get(name)
            if v is None:
                v = store.velocity[name] = np.zeros_like(p)
            v *= momentum
            v += g
            if weight_decay:
                v += weight_decay * p
            p -= lr * v
        store.zero_grad()


# -- logs -------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_miou: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(LOG_HEADER) + "\n")
        for r in self.records:
            out.write(f"{r.epoch},{r.lr!r},{r.train_loss!r},{r.val_miou!r},{r.seconds:.3f}\n")
        return out.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def parse(cls, text: str) -> "TrainLog":
        lines = text.strip("\n").split("\n")
        if lines[0] != ",".join(LOG_HEADER):
            raise ValueError(f"bad TrainLog header {lines[0]!r}")
        log = cls()
        for line in lines[1:]:
            parts = line.split(",")
            if len(parts) != len(LOG_HEADER):
                raise ValueError(f"bad TrainLog row {line!r}")
            log.records.append(EpochRecord(int(parts[0]), *(float(p) for p in parts[1:])))
        return log


# -- data -------------------------------------------------------------------

def prepare_samples(samples, cfg: TrainConfig) -> list[PreparedView]:
    """Frustum, visibility and pixel assignment for every sample (parameter free)."""
    return [s if isinstance(s, PreparedView) else
            prepare_view(s.rgb, s.labels, s.cloud, s.rig, cfg.visibility_theta,
                         cfg.coordinate_system, cfg.cloud_scope,
                         key=f"{s.scene_id}/{s.view_id}")
            for s in samples]


def _check_consistent(views: list[PreparedView], num_classes: int) -> None:
    shapes = {v.labels.shape for v in views}
    if len(shapes) > 1:
        raise ValueError(f"samples disagree in image size: {sorted(shapes)}")
    for v in views:
        lab = v.labels[v.labels != 255]
        if lab.size and lab.max() >= num_classes:
            raise ValueError(f"sample {v.key!r} has a label >= {num_classes}")


# -- training ---------------------------------------------------------------

def _snapshot(model: Model) -> Model:
    return Model(model.cfg, model.p3d.copy(), model.merge.copy(), model.seg.copy())


def train(cfg: TrainConfig, train_set, val_set=(), progress=None):
    """Returns ``(best_model, log)``; best by validation mIoU (last epoch if no val set)."""
    views = prepare_samples(train_set, cfg)
    if not views:
        raise ValueError("training set is empty")
    val_views = prepare_samples(val_set, cfg)
    _check_consistent(views + val_views, cfg.num_classes)

    model = init_model(cfg.model_config(), cfg.seed)
    order_rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    best, best_miou = None, -np.inf
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        losses = []
        for i in order_rng.permutation(len(views)):
            losses.append(loss_and_grad(model, views[i]))
            sgd_step(model.stores.values(), lr, cfg.momentum, cfg.weight_decay)
        val_miou = float("nan")
        if val_views:
            val_miou = evaluate(model, cfg, val_views)[0].miou
        if best is None or val_miou > best_miou or not val_views:
            best, best_miou = _snapshot(model), val_miou
        seconds = time.perf_counter() - t0 if cfg.log_timing else 0.0
        log.records.append(EpochRecord(epoch, lr, float(np.mean(losses)), val_miou, seconds))
        if progress is not None:
            progress(log.records[-1])
    return best, log


def evaluate(model: Model, cfg: TrainConfig, dataset) -> tuple[Metrics, list[float]]:
    """Aggregate metrics over ``dataset`` plus the per-image mIoU list (eval-mode BN)."""
    expected = init_model(cfg.model_config(), 0)
    for group, store in expected.stores.items():
        if model.stores[group].shapes() != store.shapes():
            raise ValueError(f"checkpoint {group!r} parameters do not match the config")
    views = prepare_samples(dataset, cfg)
    if not views:
        raise ValueError("evaluation set is empty")
    c = cfg.num_classes
    total = np.zeros((c, c), dtype=np.int64)
    per_image = []
    for v in views:
        cm = confusion_matrix(predict(model, v), v.labels, c)
        total += cm
        per_image.append(metrics_from_confusion(cm).miou)
    return metrics_from_confusion(total), per_image


# -- checkpoints ------------------------------------------------------------

VELOCITY_SUFFIX = ":velocity"


def checkpoint_tensors(model: Model) -> dict[str, np.ndarray]:
    out = {}
    for group, store in model.stores.items():
        for name, value in store.values.items():
            out[f"{group}/{name}"] = value
        for name, v in store.velocity.items():
            out[f"{group}/{name}{VELOCITY_SUFFIX}"] = v
    return out


def save_checkpoint(path, model: Model, cfg: TrainConfig) -> None:
    """Tensor container at ``path`` plus the config as JSON at ``path + '.json'``."""
    formats.save_tensors(path, checkpoint_tensors(model))
    Path(str(path) + ".json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True)
                                         + "\n")


def load_checkpoint(path, cfg: TrainConfig | None = None) -> tuple[Model, TrainConfig]:
    if cfg is None:
        cfg = TrainConfig.from_dict(json.loads(Path(str(path) + ".json").read_text()))
    tensors = formats.load_tensors(path)
    model = init_model(cfg.model_config(), 0)
    seen = set()
    for key, arr in tensors.items():
        group, _, name = key.partition("/")
        if group not in model.stores:
            raise ValueError(f"unknown parameter group in {key!r}")
        store = model.stores[group]
        is_vel = name.endswith(VELOCITY_SUFFIX)
        base = name[:-len(VELOCITY_SUFFIX)] if is_vel else name
        if base not in store or store[base].shape != arr.shape:
            raise ValueError(f"checkpoint tensor {key!r} does not match the architecture")
        if is_vel:
            store.velocity[base] = arr.astype(store.dtype)
        else:
            store.values[base][...] = arr
            seen.add(key)
    missing = {f"{g}/{n}" for g, s in model.stores.items() for n in s} - seen
    if missing:
        raise ValueError(f"checkpoint lacks {len(missing)} tensors, e.g. {sorted(missing)[0]}")
    return model, cfg


def model_digest(model: Model) -> str:
    h = hashlib.sha256()
    for key, arr in checkpoint_tensors(model).items():
        h.update(key.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()

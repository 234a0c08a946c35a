"""Point-cloud features fused into 2D semantic segmentation, trained end to end in NumPy."""

from .geometry import CameraRig, PointCloud, backproject_depth, frustum_select, project
from .lpointnet import NetConfig
from .metrics import miou
from .model import ModelConfig
from .trainer import TrainConfig, evaluate, lr_at, sgd_step, train
from .visibility import VisibilityConfig, coverage_sweep, visible_mask

__all__ = [
    "CameraRig", "PointCloud", "backproject_depth", "frustum_select", "project",
    "NetConfig", "miou", "ModelConfig", "TrainConfig", "evaluate", "lr_at", "sgd_step",
    "train", "VisibilityConfig", "coverage_sweep", "visible_mask",
]
__version__ = "0.1.0"

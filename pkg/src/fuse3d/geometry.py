"""Pinhole camera model, rigid transforms, frustum selection and depth back-projection.

Conventions used throughout the package:

* camera frame: x right, y down, z forward (depth);
* pixel ``(row, col)`` covers ``[col, col+1) x [row, row+1)`` in continuous
  image coordinates, so the pixel center is ``(col + 0.5, row + 0.5)``;
* ``CameraRig.world_to_camera`` maps world points into the camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_NEAR_CLIP = 0.05


@dataclass(frozen=True)
class PointCloud:
    """Positions in meters with optional RGB colors in [0, 1]."""

    positions: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(col) != len(pos):
                raise ValueError(
                    f"colors has {len(col)} rows but positions has {len(pos)}")
            if col.size and (col.min() < 0.0 or col.max() > 1.0):
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        colors = None if self.colors is None else self.colors[idx]
        return PointCloud(self.positions[idx], colors)


@dataclass(frozen=True)
class CameraRig:
    """Pinhole intrinsics plus a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))
    near_clip: float = DEFAULT_NEAR_CLIP
    far_clip: Optional[float] = None

    def __post_init__(self):
        T = np.asarray(self.world_to_camera, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {T.shape}")
        object.__setattr__(self, "world_to_camera", T)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("image size must be integral")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not self.near_clip > 0:
            raise ValueError("near_clip must be positive")
        if self.far_clip is not None and not self.far_clip > self.near_clip:
            raise ValueError("far_clip must exceed near_clip")
        if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("bottom row of world_to_camera must be (0, 0, 0, 1)")
        R = T[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation block is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation block must have determinant +1")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def with_pose(self, world_to_camera: np.ndarray) -> "CameraRig":
        return CameraRig(self.fx, self.fy, self.cx, self.cy, self.width,
                         self.height, world_to_camera, self.near_clip,
                         self.far_clip)


@dataclass(frozen=True)
class PixelProjection:
    u: float
    v: float
    col: int
    row: int
    depth: float
    in_bounds: bool


@dataclass(frozen=True)
class Projections:
    """Vectorized counterpart of :class:`PixelProjection` for N points."""

    u: np.ndarray
    v: np.ndarray
    col: np.ndarray
    row: np.ndarray
    depth: np.ndarray
    in_bounds: np.ndarray

    def __len__(self) -> int:
        return len(self.depth)

    def __getitem__(self, i: int) -> PixelProjection:
        return PixelProjection(float(self.u[i]), float(self.v[i]),
                               int(self.col[i]), int(self.row[i]),
                               float(self.depth[i]), bool(self.in_bounds[i]))

    def subset(self, indices) -> "Projections":
        idx = np.asarray(indices, dtype=np.int64)
        return Projections(self.u[idx], self.v[idx], self.col[idx],
                           self.row[idx], self.depth[idx], self.in_bounds[idx])

    def flat_pixels(self, width: int) -> np.ndarray:
        """Flat ``row * width + col`` index; only meaningful where in bounds."""
        return self.row * width + self.col


def look_at(eye, target, up=(0.0, 0.0, 1.0), roll: float = 0.0) -> np.ndarray:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    ``roll`` (radians) rotates the image about the optical axis.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= norm
    down = np.cross(forward, right)
    if roll:
        c, s = np.cos(roll), np.sin(roll)
        right, down = c * right + s * down, -s * right + c * down
    R = np.stack([right, down, forward])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = -R @ eye
    return T


def invert_rigid(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def to_camera_frame(cloud: PointCloud, rig: CameraRig) -> PointCloud:
    """Apply ``world_to_camera`` to every point; colors pass through."""
    return transform_cloud(cloud, rig.world_to_camera)


def transform_cloud(cloud: PointCloud, T: np.ndarray) -> PointCloud:
    T = np.asarray(T, dtype=np.float64)
    positions = cloud.positions @ T[:3, :3].T + T[:3, 3]
    return PointCloud(positions, cloud.colors)


def project_points(rig: CameraRig, points_cam: np.ndarray) -> Projections:
    """Project camera-frame points; points with z <= 0 are out of bounds."""
    p = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = np.where(front, rig.fx * x / safe_z + rig.cx, np.nan)
    v = np.where(front, rig.fy * y / safe_z + rig.cy, np.nan)
    with np.errstate(invalid="ignore"):
        colf = np.floor(u)
        rowf = np.floor(v)
        inside = (front & (z >= rig.near_clip)
                  & (colf >= 0) & (colf < rig.width)
                  & (rowf >= 0) & (rowf < rig.height))
    if rig.far_clip is not None:
        inside &= z <= rig.far_clip
    sentinel = np.iinfo(np.int64).min
    col = np.where(np.isfinite(colf), colf, 0).astype(np.int64)
    row = np.where(np.isfinite(rowf), rowf, 0).astype(np.int64)
    col = np.where(front, col, sentinel)
    row = np.where(front, row, sentinel)
    return Projections(u, v, col, row, z.copy(), inside)


def project(rig: CameraRig, point_cam) -> PixelProjection:
    """Project a single camera-frame point."""
    return project_points(rig, np.asarray(point_cam, dtype=np.float64)[None])[0]


def frustum_select(cloud_cam: PointCloud, rig: CameraRig) -> np.ndarray:
    """Ascending indices of the points that project inside the image."""
    proj = project_points(rig, cloud_cam.positions)
    return np.flatnonzero(proj.in_bounds)


def backproject_depth(rig: CameraRig, depth: np.ndarray, stride: int = 1) -> PointCloud:
    """Lift every ``stride``-th pixel with positive depth to a camera-frame point.

    Pixels are visited row-major. The emitted point sits on the ray through
    the pixel center, at camera-frame z equal to the stored depth.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (rig.height, rig.width):
        raise ValueError(
            f"depth map is {depth.shape}, rig expects {(rig.height, rig.width)}")
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    rows = np.arange(0, rig.height, stride)
    cols = np.arange(0, rig.width, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    d = depth[rr, cc]
    keep = np.isfinite(d) & (d > 0)
    rr, cc, d = rr[keep], cc[keep], d[keep]
    x = (cc + 0.5 - rig.cx) * d / rig.fx
    y = (rr + 0.5 - rig.cy) * d / rig.fy
    return PointCloud(np.stack([x, y, d], axis=1))

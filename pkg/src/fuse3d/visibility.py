"""Point-set visibility: per-pixel z-buffer plus an angular occlusion cone.

A frustum point ``p`` is hidden when

* another point lands in the same integer pixel and is nearer (equal depths:
  the lower index wins), or
* ``theta > 0`` and some point ``q`` with ``depth(q) < depth(p)`` lies inside
  the cone of half-angle ``theta`` around the ray to ``p``, i.e.
  ``dot(dir_p, dir_q) >= cos(theta)``.

The first rule is what ``theta = 0`` reduces to; keeping it for every theta
makes the visible set shrink monotonically as theta grows. Candidate
occluders are gathered from a screen-space grid, but the predicate evaluated
on the candidates is the exact one above, so the result never depends on the
grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import CameraRig, PointCloud, project_points

DEFAULT_THETA = 2.0
DEFAULT_CELL_SIZE = 8


@dataclass(frozen=True)
class VisibilityConfig:
    theta: float = DEFAULT_THETA  # degrees
    cell_size: int = DEFAULT_CELL_SIZE  # pixels

    def __post_init__(self):
        if not self.theta >= 0:
            raise ValueError("theta must be >= 0 degrees")
        if self.cell_size < 1:
            raise ValueError("cell_size must be >= 1 pixel")
        if self.theta >= 90:
            raise ValueError("theta must be below 90 degrees")


@dataclass(frozen=True)
class VisibilityResult:
    visible: np.ndarray  # bool per input point
    coverage: float

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.visible)


def unit_rays(points: np.ndarray) -> np.ndarray:
    """Unit direction from the camera origin to each point."""
    p = np.asarray(points, dtype=np.float64)
    norm = np.sqrt(p[:, 0] * p[:, 0] + p[:, 1] * p[:, 1] + p[:, 2] * p[:, 2])
    return p / norm[:, None]


def zbuffer_visible(flat_pixel: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Keep the nearest point of every pixel, lowest index on depth ties."""
    n = len(depth)
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    order = np.lexsort((np.arange(n), depth, flat_pixel))
    first = np.ones(n, dtype=bool)
    first[1:] = flat_pixel[order[1:]] != flat_pixel[order[:-1]]
    keep[order[first]] = True
    return keep


def _screen_radius(rays: np.ndarray, theta_rad: float, focal: float) -> np.ndarray:
    """Upper bound, in pixels, on how far an occluder within the cone projects.

    For a ray at angle ``beta`` from the optical axis, the cone of half-angle
    ``theta`` meets the image plane in an ellipse whose farthest point from the
    ray's own projection is ``tan(beta + theta) - tan(beta)`` away (normalized
    units). Rays whose cone reaches 90 degrees get an infinite radius.
    """
    beta = np.arccos(np.clip(rays[:, 2], -1.0, 1.0))
    outer = beta + theta_rad
    radius = np.full(len(rays), np.inf)
    ok = outer < math.pi / 2 - 1e-6
    radius[ok] = focal * (np.tan(outer[ok]) - np.tan(beta[ok]))
    # slack for rounding in u, v and in the tangent evaluation
    return radius * (1.0 + 1e-6) + 1e-3


def _cone_occluded(rays: np.ndarray, depth: np.ndarray, u: np.ndarray,
                   v: np.ndarray, theta_rad: float, focal: float,
                   cell_size: int) -> np.ndarray:
    n = len(depth)
    occluded = np.zeros(n, dtype=bool)
    cos_t = math.cos(theta_rad)
    radius = _screen_radius(rays, theta_rad, focal)
    cu = np.floor(u / cell_size).astype(np.int64)
    cv = np.floor(v / cell_size).astype(np.int64)

    cells: dict[tuple[int, int], np.ndarray] = {}
    order = np.lexsort((cv, cu))
    keys = np.stack([cu[order], cv[order]], axis=1)
    bounds = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
    for chunk in np.split(order, bounds):
        cells[(int(cu[chunk[0]]), int(cv[chunk[0]]))] = chunk
    all_idx = np.arange(n)

    for (ku, kv), members in cells.items():
        rmax = radius[members].max()
        if not np.isfinite(rmax):
            cand = all_idx
        else:
            u0 = math.floor((ku * cell_size - rmax) / cell_size)
            u1 = math.floor(((ku + 1) * cell_size + rmax) / cell_size)
            v0 = math.floor((kv * cell_size - rmax) / cell_size)
            v1 = math.floor(((kv + 1) * cell_size + rmax) / cell_size)
            if (u1 - u0 + 1) * (v1 - v0 + 1) > len(cells):
                parts = [m for (a, b), m in cells.items()
                         if u0 <= a <= u1 and v0 <= b <= v1]
            else:
                parts = [cells[(a, b)] for a in range(u0, u1 + 1)
                         for b in range(v0, v1 + 1) if (a, b) in cells]
            cand = np.concatenate(parts)
        rp = rays[members]
        rq = rays[cand]
        dot = (rp[:, 0:1] * rq[None, :, 0] + rp[:, 1:2] * rq[None, :, 1]) \
            + rp[:, 2:3] * rq[None, :, 2]
        nearer = depth[cand][None, :] < depth[members][:, None]
        occluded[members] = np.any(nearer & (dot >= cos_t), axis=1)
    return occluded


def visible_mask(cloud_cam: PointCloud, rig: CameraRig,
                 cfg: VisibilityConfig = VisibilityConfig()) -> VisibilityResult:
    """Visibility of camera-frame frustum points under ``cfg.theta`` degrees."""
    pts = cloud_cam.positions
    n = len(pts)
    if n == 0:
        return VisibilityResult(np.zeros(0, dtype=bool), 0.0)
    if np.any(pts[:, 2] <= 0):
        raise ValueError("visibility expects points in front of the camera")
    proj = project_points(rig, pts)
    depth = proj.depth
    flat = proj.flat_pixels(rig.width)
    # key on (row, col) so points just off the image cannot alias a real pixel
    _, pixel_id = np.unique(np.stack([proj.row, proj.col], axis=1), axis=0,
                            return_inverse=True)
    visible = zbuffer_visible(pixel_id.reshape(-1), depth)
    if cfg.theta > 0:
        rays = unit_rays(pts)
        occ = _cone_occluded(rays, depth, proj.u, proj.v, math.radians(cfg.theta),
                             max(rig.fx, rig.fy), cfg.cell_size)
        visible &= ~occ
    return VisibilityResult(visible, pixel_coverage(flat[visible & proj.in_bounds], rig))


def pixel_coverage(flat_pixels: np.ndarray, rig: CameraRig) -> float:
    return len(np.unique(flat_pixels)) / float(rig.width * rig.height)


def coverage_sweep(cloud_cam: PointCloud, rig: CameraRig, thetas: Sequence[float],
                   cell_size: int = DEFAULT_CELL_SIZE,
                   with_counts: bool = False) -> list[tuple]:
    """Coverage for each theta (ascending); rows are ``(theta, coverage)``.

    With ``with_counts`` rows become ``(theta, visible_points, coverage)``.
    """
    thetas = [float(t) for t in thetas]
    if any(b < a for a, b in zip(thetas, thetas[1:])):
        raise ValueError("thetas must be sorted ascending")
    rows = []
    for theta in thetas:
        res = visible_mask(cloud_cam, rig, VisibilityConfig(theta, cell_size))
        if with_counts:
            rows.append((theta, int(res.visible.sum()), res.coverage))
        else:
            rows.append((theta, res.coverage))
    return rows

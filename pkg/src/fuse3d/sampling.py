"""Poisson-disk decimation and radius context gathering on point clouds."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .geometry import PointCloud
from .rng import Xorshift128Plus

_NEIGHBOR_OFFSETS = list(product((-1, 0, 1), repeat=3))


@dataclass(frozen=True)
class SamplingConfig:
    poisson_radius: float = 0.2
    context_radius: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.poisson_radius > 0 and self.context_radius > 0):
            raise ValueError("sampling radii must be positive")


def _cells(points: np.ndarray, radius: float) -> np.ndarray:
    # cells a hair wider than the radius so rounding in the division can
    # never push a true neighbor two cells away
    return np.floor(points / (radius * (1.0 + 1e-9))).astype(np.int64)


def poisson_downsample(cloud: PointCloud, radius: float, seed: int = 0) -> np.ndarray:
    """Greedy dart throwing over a seeded shuffle of the points.

    A point is kept iff no already-kept point is closer than ``radius``.
    Returns the kept indices in ascending order.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts = cloud.positions
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = Xorshift128Plus(seed).permutation(n)
    cells = [tuple(c) for c in _cells(pts, radius).tolist()]
    coords = pts.tolist()
    r2 = radius * radius
    grid: dict[tuple, list[int]] = {}
    kept = []
    for i in order:
        cx, cy, cz = cells[i]
        x, y, z = coords[i]
        blocked = False
        for dx, dy, dz in _NEIGHBOR_OFFSETS:
            for j in grid.get((cx + dx, cy + dy, cz + dz), ()):
                qx, qy, qz = coords[j]
                ex, ey, ez = x - qx, y - qy, z - qz
                if ex * ex + ey * ey + ez * ez < r2:
                    blocked = True
                    break
            if blocked:
                break
        if not blocked:
            kept.append(i)
            grid.setdefault((cx, cy, cz), []).append(i)
    return np.array(sorted(kept), dtype=np.int64)


def radius_context(cloud: PointCloud, anchor_indices, radius: float) -> np.ndarray:
    """Sorted union of the anchors and all points within ``radius`` of one."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    anchors = np.unique(np.asarray(anchor_indices, dtype=np.int64))
    pts = cloud.positions
    if anchors.size == 0:
        return anchors
    if anchors[0] < 0 or anchors[-1] >= len(pts):
        raise IndexError("anchor index out of range")
    cells = _cells(pts, radius)
    order = np.lexsort(cells.T[::-1])
    sorted_cells = cells[order]
    bounds = np.flatnonzero(np.any(sorted_cells[1:] != sorted_cells[:-1], axis=1)) + 1
    grid = {tuple(sorted_cells[chunk[0]].tolist()): order[chunk]
            for chunk in np.split(np.arange(len(order)), bounds)}
    hit = np.zeros(len(pts), dtype=bool)
    hit[anchors] = True
    r2 = radius * radius
    for a in anchors.tolist():
        base = cells[a]
        parts = [grid[k] for k in ((base[0] + dx, base[1] + dy, base[2] + dz)
                                   for dx, dy, dz in _NEIGHBOR_OFFSETS) if k in grid]
        cand = np.concatenate(parts)
        diff = pts[cand] - pts[a]
        d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        hit[cand[d2 <= r2]] = True
    return np.flatnonzero(hit)


"""Deterministic synthetic indoor scenes: a room with boxes and spheres.

Each scene is rendered by casting one ray per pixel center; the nearest
primitive gives the label and Lambert-shaded color. The point cloud is
sampled uniformly over primitive surfaces (area weighted). Floor, walls,
ceiling and boxes share one color; under a horizontal light every
upward or downward face and every vertical face turned away from the
light shade identically, so only geometry separates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import CameraRig, PointCloud, look_at
from .metrics import IGNORE_ID

CLASS_NAMES = ("floor", "wall", "ceiling", "box", "sphere")
FLOOR, WALL, CEILING, BOX, SPHERE = range(5)

DEFAULT_PALETTE = (
    (0.60, 0.58, 0.54),  # floor
    (0.60, 0.58, 0.54),  # wall, same as floor
    (0.60, 0.58, 0.54),  # ceiling, same as floor
    (0.60, 0.58, 0.54),  # box, same as floor
    (0.22, 0.42, 0.70),  # sphere
)

LIGHT_DIR = np.array([0.8, 0.6, 0.0])  # horizontal, unit length
AMBIENT = 0.55
DIFFUSE = 0.45
NOISE_SIGMA = 0.02


@dataclass(frozen=True)
class SceneSpec:
    room_size: tuple = (5.0, 4.0, 2.6)  # x, y extent and height, meters
    objects: tuple = (2, 5)  # inclusive range of object count
    box_size: tuple = (0.3, 1.0)  # edge length range
    sphere_radius: tuple = (0.2, 0.5)
    palette: tuple = DEFAULT_PALETTE
    points_per_scene: int = 5000
    image_size: tuple = (64, 64)  # height, width
    hfov_deg: float = 70.0
    cameras_per_scene: int = 1
    num_scenes: int = 1
    seed: int = 0

    def __post_init__(self):
        h, w = self.image_size
        if h % 8 or w % 8 or h < 8 or w < 8:
            raise ValueError("image dimensions must be positive multiples of 8")
        if len(self.palette) != len(CLASS_NAMES):
            raise ValueError(f"palette needs {len(CLASS_NAMES)} colors")
        colors = [tuple(map(float, c)) for c in self.palette]
        if len(set(colors)) == len(colors):
            raise ValueError("at least two classes must share a color")
        if min(self.room_size) <= 0:
            raise ValueError("room extents must be positive")
        lo, hi = self.objects
        if not 0 <= lo <= hi:
            raise ValueError("object count range must satisfy 0 <= min <= max")
        if self.points_per_scene < 1 or self.cameras_per_scene < 1 or self.num_scenes < 0:
            raise ValueError("points, cameras and scene counts must be positive")
        if not 0 < self.hfov_deg < 180:
            raise ValueError("hfov_deg must be in (0, 180)")
        x, y, z = self.room_size
        biggest = max(self.box_size[1], 2 * self.sphere_radius[1])
        if hi > 0 and (biggest >= min(x, y) - 2 * _CAMERA_MARGIN or biggest >= z):
            raise ValueError("objects do not fit inside the room")
        if min(x, y) <= 2 * _CAMERA_MARGIN or z <= _CAMERA_Z[1]:
            raise ValueError("room too small to place cameras")

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        conv = {k: tuple(tuple(c) if isinstance(c, list) else c for c in v)
                if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**conv)


_CAMERA_MARGIN = 0.4
_CAMERA_Z = (0.9, 1.7)
_MAX_PITCH_DEG = 15.0
_MIN_CLEARANCE = 2.0  # free distance along the optical axis


@dataclass(frozen=True)
class Primitive:
    kind: str  # "plane", "box" or "sphere"
    label: int
    # plane: axis, value, inward normal sign; box: lo, hi; sphere: center, radius
    params: tuple


@dataclass
class SceneSample:
    rgb: np.ndarray  # (H, W, 3) float32, multiples of 1/255
    labels: np.ndarray  # (H, W) uint8, IGNORE_ID on the border ring
    cloud: PointCloud  # world frame
    rig: CameraRig
    scene_id: int
    view_id: int
    depth: np.ndarray | None = None


@dataclass
class Scene:
    scene_id: int
    primitives: list
    cloud: PointCloud
    point_primitive: np.ndarray  # source primitive of each point
    point_labels: np.ndarray
    views: list = field(default_factory=list)


# -- geometry of primitives ---------------------------------------------------

def room_primitives(size) -> list[Primitive]:
    x, y, z = size
    return [
        Primitive("plane", FLOOR, (2, 0.0, 1.0)),
        Primitive("plane", CEILING, (2, float(z), -1.0)),
        Primitive("plane", WALL, (0, 0.0, 1.0)),
        Primitive("plane", WALL, (0, float(x), -1.0)),
        Primitive("plane", WALL, (1, 0.0, 1.0)),
        Primitive("plane", WALL, (1, float(y), -1.0)),
    ]


def intersect(prim: Primitive, origin: np.ndarray, dirs: np.ndarray, room_size):
    """Ray parameter ``t > 0`` of the first hit (inf on a miss) and the unit normal.

    Plane hits are restricted to the room rectangle.
    """
    n = len(dirs)
    t = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        if prim.kind == "plane":
            axis, value, sign = prim.params
            tt = (value - origin[axis]) / dirs[:, axis]
            hit = origin + tt[:, None] * dirs
            ok = tt > 1e-9
            for a in range(3):
                if a != axis:
                    ok &= (hit[:, a] >= 0.0) & (hit[:, a] <= room_size[a])
            t[ok] = tt[ok]
            normal[:, axis] = sign
        elif prim.kind == "box":
            lo, hi = (np.asarray(v) for v in prim.params)
            t0 = (lo - origin) / dirs
            t1 = (hi - origin) / dirs
            tmin = np.minimum(t0, t1)
            tmax = np.maximum(t0, t1)
            tnear = np.nanmax(tmin, axis=1)
            tfar = np.nanmin(tmax, axis=1)
            ok = (tnear <= tfar) & (tnear > 1e-9)
            t[ok] = tnear[ok]
            face = np.nanargmax(tmin, axis=1)
            rows = np.arange(n)
            normal[rows, face] = -np.sign(dirs[rows, face])
        else:
            center, radius = np.asarray(prim.params[0]), prim.params[1]
            oc = origin - center
            b = dirs @ oc
            c = oc @ oc - radius * radius
            disc = b * b - c
            ok = disc >= 0
            tt = -b - np.sqrt(np.where(ok, disc, 0.0))
            ok &= tt > 1e-9
            t[ok] = tt[ok]
            hit = origin + np.where(ok, tt, 0.0)[:, None] * dirs
            normal = (hit - center) / radius
    return t, normal


def distance_to_surface(prim: Primitive, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if prim.kind == "plane":
        axis, value, _ = prim.params
        return np.abs(p[:, axis] - value)
    if prim.kind == "sphere":
        center, radius = prim.params
        return np.abs(np.linalg.norm(p - np.asarray(center), axis=1) - radius)
    lo, hi = (np.asarray(v) for v in prim.params)
    inside = np.all((p >= lo) & (p <= hi), axis=1)
    outside_d = np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=1)
    inside_d = np.minimum(p - lo, hi - p).min(axis=1)
    return np.where(inside, inside_d, outside_d)


def _surface_area(prim: Primitive, room_size) -> float:
    if prim.kind == "plane":
        axis = prim.params[0]
        a, b = (room_size[k] for k in range(3) if k != axis)
        return a * b
    if prim.kind == "sphere":
        return 4.0 * np.pi * prim.params[1] ** 2
    lo, hi = (np.asarray(v) for v in prim.params)
    e = hi - lo
    return 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])


def _sample_surface(prim: Primitive, n: int, rng: np.random.Generator, room_size):
    if prim.kind == "plane":
        axis, value, _ = prim.params
        pts = rng.uniform(0.0, 1.0, size=(n, 3)) * np.asarray(room_size, dtype=np.float64)
        pts[:, axis] = value
        return pts
    if prim.kind == "sphere":
        center, radius = prim.params
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(center) + radius * d
    lo, hi = (np.asarray(v) for v in prim.params)
    e = hi - lo
    face_area = np.array([e[1] * e[2], e[0] * e[2], e[0] * e[1]])
    probs = np.repeat(face_area, 2) / (2.0 * face_area.sum())
    face = rng.choice(6, size=n, p=probs)
    pts = lo + rng.uniform(0.0, 1.0, size=(n, 3)) * e
    axis = face // 2
    rows = np.arange(n)
    pts[rows, axis] = np.where(face % 2 == 0, lo[axis], hi[axis])
    return pts


# -- scene layout ----------------------------------------------------------

def _place_objects(spec: SceneSpec, rng: np.random.Generator) -> list[Primitive]:
    x, y, z = spec.room_size
    count = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
    footprints: list[tuple] = []
    prims = []
    for _ in range(count):
        for _attempt in range(100):
            if rng.uniform() < 0.5:
                e = rng.uniform(*spec.box_size, size=3)
                e[2] = min(e[2], z * 0.8)
                cx = rng.uniform(e[0] / 2, x - e[0] / 2)
                cy = rng.uniform(e[1] / 2, y - e[1] / 2)
                lo = (cx - e[0] / 2, cy - e[1] / 2, 0.0)
                hi = (cx + e[0] / 2, cy + e[1] / 2, float(e[2]))
                fp = (lo[0], lo[1], hi[0], hi[1])
                cand = Primitive("box", BOX, (lo, hi))
            else:
                r = float(rng.uniform(*spec.sphere_radius))
                cx = rng.uniform(r, x - r)
                cy = rng.uniform(r, y - r)
                fp = (cx - r, cy - r, cx + r, cy + r)
                cand = Primitive("sphere", SPHERE, ((cx, cy, r), r))
            if all(fp[2] < g[0] or fp[0] > g[2] or fp[3] < g[1] or fp[1] > g[3]
                   for g in footprints):
                footprints.append(fp)
                prims.append(cand)
                break
    return prims


def _inside_any(point, prims, margin: float) -> bool:
    for p in prims:
        if p.kind == "box":
            lo, hi = (np.asarray(v) for v in p.params)
            if np.all(point >= lo - margin) and np.all(point <= hi + margin):
                return True
        elif p.kind == "sphere":
            if np.linalg.norm(point - np.asarray(p.params[0])) <= p.params[1] + margin:
                return True
    return False


def _camera_pose(spec: SceneSpec, objects, rng: np.random.Generator) -> np.ndarray:
    x, y, _ = spec.room_size
    prims = room_primitives(spec.room_size) + list(objects)
    m = _CAMERA_MARGIN
    for _ in range(1000):
        eye = np.array([rng.uniform(m, x - m), rng.uniform(m, y - m),
                        rng.uniform(*_CAMERA_Z)])
        if _inside_any(eye, objects, 0.2):
            continue
        yaw = rng.uniform(-np.pi, np.pi)
        pitch = np.deg2rad(rng.uniform(-_MAX_PITCH_DEG, _MAX_PITCH_DEG))
        fwd = np.array([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw),
                        np.sin(pitch)])
        _, t, _ = cast_rays(prims, eye, fwd[None], spec.room_size)
        if t[0] < _MIN_CLEARANCE:
            continue
        return look_at(eye, eye + fwd)
    raise ValueError("could not place a camera outside the objects")


def make_rig(spec: SceneSpec, world_to_camera=None) -> CameraRig:
    h, w = spec.image_size
    f = (w / 2.0) / np.tan(np.deg2rad(spec.hfov_deg) / 2.0)
    pose = np.eye(4) if world_to_camera is None else world_to_camera
    return CameraRig(f, f, w / 2.0, h / 2.0, w, h, pose)


def pixel_rays(rig: CameraRig) -> np.ndarray:
    """Unit world-frame ray directions through pixel centers, ``(H*W, 3)`` row-major."""
    rows, cols = np.meshgrid(np.arange(rig.height), np.arange(rig.width), indexing="ij")
    d_cam = np.stack([(cols.ravel() + 0.5 - rig.cx) / rig.fx,
                      (rows.ravel() + 0.5 - rig.cy) / rig.fy,
                      np.ones(rig.height * rig.width)], axis=1)
    d = d_cam @ rig.rotation  # R^T applied to each row
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def cast_rays(primitives, origin, dirs, room_size):
    """Index of the nearest primitive per ray (first on ties), hit distance and normal."""
    ts, normals = zip(*(intersect(p, origin, dirs, room_size) for p in primitives))
    t = np.stack(ts, axis=1)
    nearest = t.argmin(axis=1)
    rows = np.arange(len(dirs))
    return nearest, t[rows, nearest], np.stack(normals, axis=1)[rows, nearest]


def render(spec: SceneSpec, primitives, rig: CameraRig, rng: np.random.Generator):
    h, w = rig.height, rig.width
    dirs = pixel_rays(rig)
    nearest, t, normal = cast_rays(primitives, rig.center, dirs, spec.room_size)
    # face the normal toward the camera before shading
    normal = normal * -np.sign(np.sum(normal * dirs, axis=1, keepdims=True))
    prim_labels = np.array([p.label for p in primitives])
    labels = prim_labels[nearest].reshape(h, w).astype(np.uint8)
    palette = np.asarray(spec.palette, dtype=np.float64)
    shade = AMBIENT + DIFFUSE * np.maximum(normal @ LIGHT_DIR, 0.0)
    rgb = palette[prim_labels[nearest]] * shade[:, None]
    rgb = rgb + rng.normal(0.0, NOISE_SIGMA, size=rgb.shape)
    rgb = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0) / 255.0
    labels[0, :] = labels[-1, :] = labels[:, 0] = labels[:, -1] = IGNORE_ID
    depth = (t * (dirs @ rig.rotation[2])).reshape(h, w)
    return rgb.reshape(h, w, 3).astype(np.float32), labels, depth


def generate_scene(spec: SceneSpec, scene_id: int) -> Scene:
    rng = np.random.default_rng(spec.seed ^ scene_id)
    objects = _place_objects(spec, rng)
    prims = room_primitives(spec.room_size) + objects
    areas = np.array([_surface_area(p, spec.room_size) for p in prims])
    counts = rng.multinomial(spec.points_per_scene, areas / areas.sum())
    pts = [_sample_surface(p, int(c), rng, spec.room_size) for p, c in zip(prims, counts)]
    src = np.repeat(np.arange(len(prims)), counts)
    positions = np.concatenate(pts, axis=0)
    labels = np.array([p.label for p in prims])[src]
    colors = np.asarray(spec.palette, dtype=np.float64)[labels]
    scene = Scene(scene_id, prims, PointCloud(positions, colors), src, labels)
    for view_id in range(spec.cameras_per_scene):
        rig = make_rig(spec, _camera_pose(spec, objects, rng))
        rgb, lab, depth = render(spec, prims, rig, rng)
        scene.views.append(SceneSample(rgb, lab, scene.cloud, rig, scene_id, view_id, depth))
    return scene


def gen_scenes(spec: SceneSpec) -> list[SceneSample]:
    """All views of ``spec.num_scenes`` scenes; scene ``i`` is seeded with ``seed ^ i``."""
    return [v for i in range(spec.num_scenes) for v in generate_scene(spec, i).views]

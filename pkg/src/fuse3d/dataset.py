"""Dataset directory layout.

::

    <root>/scene_0000/cloud.ply
    <root>/scene_0000/000.rgb.png
    <root>/scene_0000/000.labels.png
    <root>/scene_0000/000.camera.json
    ...
"""

from __future__ import annotations

import re
from pathlib import Path

from . import formats
from .scenes import SceneSample

_VIEW_RE = re.compile(r"^(\d{3,})\.camera\.json$")


def scene_dir(root, scene_id: int) -> Path:
    return Path(root) / f"scene_{scene_id:04d}"


def view_prefix(root, scene_id: int, view_id: int) -> Path:
    return scene_dir(root, scene_id) / f"{view_id:03d}"


def write_dataset(root, samples: list[SceneSample]) -> None:
    root = Path(root)
    written = set()
    for s in samples:
        d = scene_dir(root, s.scene_id)
        d.mkdir(parents=True, exist_ok=True)
        if s.scene_id not in written:
            formats.write_ply(d / "cloud.ply", s.cloud)
            written.add(s.scene_id)
        p = view_prefix(root, s.scene_id, s.view_id)
        formats.write_rgb(f"{p}.rgb.png", s.rgb)
        formats.write_labels(f"{p}.labels.png", s.labels)
        formats.write_camera(f"{p}.camera.json", s.rig)


def list_views(root) -> list[tuple[int, int]]:
    """Sorted ``(scene_id, view_id)`` pairs found under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    out = []
    for d in sorted(root.glob("scene_*")):
        if not d.is_dir():
            continue
        scene_id = int(d.name.split("_", 1)[1])
        for f in sorted(d.iterdir()):
            m = _VIEW_RE.match(f.name)
            if m:
                out.append((scene_id, int(m.group(1))))
    return out


def read_view(prefix, cloud=None, scene_id: int = 0, view_id: int = 0) -> SceneSample:
    """Load ``<prefix>.{rgb,labels}.png`` and ``<prefix>.camera.json`` (cloud from its folder)."""
    prefix = Path(prefix)
    if cloud is None:
        cloud = formats.read_ply(prefix.parent / "cloud.ply")
    rig = formats.read_camera(f"{prefix}.camera.json")
    rgb = formats.read_rgb(f"{prefix}.rgb.png")
    labels = formats.read_labels(f"{prefix}.labels.png")
    if rgb.shape[:2] != (rig.height, rig.width) or labels.shape != (rig.height, rig.width):
        raise formats.ParseError("image size disagrees with the camera", 0, str(prefix))
    return SceneSample(rgb, labels, cloud, rig, scene_id, view_id)


def read_dataset(root) -> list[SceneSample]:
    samples = []
    clouds = {}
    for scene_id, view_id in list_views(root):
        if scene_id not in clouds:
            clouds[scene_id] = formats.read_ply(scene_dir(root, scene_id) / "cloud.ply")
        samples.append(read_view(view_prefix(root, scene_id, view_id), clouds[scene_id],
                                 scene_id, view_id))
    if not samples:
        raise FileNotFoundError(f"no views found under {root}")
    return samples

"""On-disk formats: PLY point clouds, camera JSON, PNG images and the LPNT tensor container."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .geometry import CameraRig, PointCloud


class ParseError(ValueError):
    """Malformed input file; carries the byte offset and the field being read."""

    def __init__(self, message: str, offset: int, field: str):
        super().__init__(f"{message} (field {field!r} at byte {offset})")
        self.offset = offset
        self.field = field


# -- PLY ------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, cloud: PointCloud, binary: bool = True, double: bool = False) -> None:
    """Write xyz (float32, or float64 with ``double``) and optional uchar rgb."""
    n = len(cloud)
    ftype = "double" if double else "float"
    lines = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
             f"element vertex {n}"]
    lines += [f"property {ftype} {a}" for a in "xyz"]
    fields = [(a, "<f8" if double else "<f4") for a in "xyz"]
    if cloud.colors is not None:
        lines += [f"property uchar {a}" for a in ("red", "green", "blue")]
        fields += [(a, "u1") for a in ("red", "green", "blue")]
    lines.append("end_header")
    rec = np.zeros(n, dtype=fields)
    for k, a in enumerate("xyz"):
        rec[a] = cloud.positions[:, k]
    if cloud.colors is not None:
        rgb = np.rint(cloud.colors * 255.0).astype(np.uint8)
        for k, a in enumerate(("red", "green", "blue")):
            rec[a] = rgb[:, k]
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        if binary:
            f.write(rec.tobytes())
        else:
            for r in rec:
                f.write((" ".join(repr(v.item()) for v in r) + "\n").encode("ascii"))


def _parse_header(data: bytes):
    if not data.startswith(b"ply\n"):
        raise ParseError("missing 'ply' magic", 0, "magic")
    offset = 4
    fmt = None
    elements: list[list] = []
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise ParseError("header ended before end_header", offset, "header")
        line = data[offset:end].decode("ascii", errors="replace").strip()
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            pass
        elif parts[0] == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported format line {line!r}", offset, "format")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"bad element line {line!r}", offset, "element")
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", offset, "property")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ParseError(f"unsupported property {line!r}", offset, "property")
            elements[-1][2].append((parts[2], "<" + _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            offset = end + 1
            break
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", offset, "header")
        offset = end + 1
    if fmt is None:
        raise ParseError("no format line", offset, "format")
    return fmt, elements, offset


def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    fmt, elements, offset = _parse_header(data)
    vertex = None
    if fmt == "ascii":
        tokens = data[offset:].split()
        pos = 0
        for name, count, props in elements:
            width = len(props)
            need = count * width
            if pos + need > len(tokens):
                raise ParseError(f"expected {count} {name} rows", offset, name)
            block = tokens[pos:pos + need]
            pos += need
            if name == "vertex":
                try:
                    vals = np.array(block, dtype=np.float64).reshape(count, width)
                except ValueError as exc:
                    raise ParseError(str(exc), offset, name) from None
                vertex = {p: vals[:, k] for k, (p, _) in enumerate(props)}
    else:
        for name, count, props in elements:
            dt = np.dtype(props)
            size = count * dt.itemsize
            if offset + size > len(data):
                got = (len(data) - offset) // max(dt.itemsize, 1)
                raise ParseError(f"expected {count} {name} rows, found {got}",
                                 offset + got * dt.itemsize, name)
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += size
            if name == "vertex":
                vertex = {p: rec[p] for p in dt.names}
    if vertex is None:
        raise ParseError("no vertex element", offset, "vertex")
    for a in "xyz":
        if a not in vertex:
            raise ParseError(f"vertex has no {a!r} property", offset, a)
    positions = np.stack([vertex[a] for a in "xyz"], axis=1)
    colors = None
    if all(c in vertex for c in ("red", "green", "blue")):
        colors = np.stack([vertex[c] for c in ("red", "green", "blue")], axis=1) / 255.0
    return PointCloud(positions, colors)


def read_ply_positions32(path) -> np.ndarray:
    """Raw float32 coordinates (no widening), for exact binary roundtrip checks."""
    data = Path(path).read_bytes()
    fmt, elements, offset = _parse_header(data)
    if fmt != "binary_little_endian":
        raise ValueError("raw float32 access needs a binary PLY")
    for name, count, props in elements:
        dt = np.dtype(props)
        if name == "vertex":
            if offset + count * dt.itemsize > len(data):
                raise ParseError("truncated vertex data", offset, name)
            rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            return np.stack([rec[a] for a in "xyz"], axis=1)
        offset += count * dt.itemsize
    raise ParseError("no vertex element", offset, "vertex")


# -- camera JSON -------------------------------------------------------------

def _g17(x: float) -> float:
    return float(f"{float(x):.17g}")


def write_camera(path, rig: CameraRig) -> None:
    doc = {
        "fx": _g17(rig.fx), "fy": _g17(rig.fy), "cx": _g17(rig.cx), "cy": _g17(rig.cy),
        "width": rig.width, "height": rig.height,
        "world_to_camera": [_g17(v) for v in rig.world_to_camera.reshape(-1)],
        "near_clip": _g17(rig.near_clip),
        "far_clip": None if rig.far_clip is None else _g17(rig.far_clip),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_camera(path) -> CameraRig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.pos, "json") from None
    for key in ("fx", "fy", "cx", "cy", "width", "height", "world_to_camera"):
        if key not in doc:
            raise ParseError("missing key", 0, key)
    try:
        pose = np.array(doc["world_to_camera"], dtype=np.float64)
        if pose.size != 16:
            raise ValueError("world_to_camera needs 16 numbers")
        return CameraRig(doc["fx"], doc["fy"], doc["cx"], doc["cy"], doc["width"],
                         doc["height"], pose.reshape(4, 4),
                         doc.get("near_clip", 0.05), doc.get("far_clip"))
    except (ValueError, TypeError) as exc:
        raise ParseError(str(exc), 0, "camera") from None


# -- PNG images -------------------------------------------------------------

def write_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("labels must be a 2D array of ids in [0, 255]")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")


def read_labels(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "L":
        raise ParseError(f"label PNG has mode {img.mode}, expected L", 0, "mode")
    return np.asarray(img, dtype=np.uint8).copy()


def write_rgb(path, rgb: np.ndarray) -> None:
    """``rgb`` is float in [0, 1] (rounded to 8 bits) or uint8."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "RGB":
        raise ParseError(f"RGB PNG has mode {img.mode}", 0, "mode")
    return np.asarray(img, dtype=np.float32) / 255.0


def write_depth(path, depth_m: np.ndarray) -> None:
    """16-bit PNG in millimeters; 0 marks missing depth."""
    mm = np.rint(np.nan_to_num(np.asarray(depth_m), nan=0.0, posinf=0.0) * 1000.0)
    if mm.min(initial=0) < 0 or mm.max(initial=0) > 65535:
        raise ValueError("depth out of the 16-bit millimeter range")
    Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")


def read_depth(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 1000.0


# -- index lists ------------------------------------------------------------

def write_indices(path, indices: np.ndarray) -> None:
    np.asarray(indices, dtype="<u4").tofile(path)


def read_indices(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise ParseError("index file length is not a multiple of 4", len(raw) - len(raw) % 4,
                         "indices")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64)


# -- LPNT tensor container ------------------------------------------------

MAGIC = b"LPNT"
VERSION = 1


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Named float32 tensors in insertion order."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()

    def take(offset, size, field):
        if offset + size > len(data):
            raise ParseError("unexpected end of file", offset, field)
        return data[offset:offset + size]

    if take(0, 4, "magic") != MAGIC:
        raise ParseError("bad magic", 0, "magic")
    version, count = struct.unpack("<II", take(4, 8, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4, "version")
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(offset, 2, "name length"))
        offset += 2
        try:
            name = take(offset, nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("name is not UTF-8", offset, "name") from None
        offset += nlen
        (rank,) = struct.unpack("<B", take(offset, 1, f"{name}.rank"))
        offset += 1
        dims = struct.unpack(f"<{rank}I", take(offset, 4 * rank, f"{name}.dims"))
        offset += 4 * rank
        size = 4 * int(np.prod(dims, dtype=np.int64))
        payload = take(offset, size, f"{name}.payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        offset += size
    if offset != len(data):
        raise ParseError("trailing bytes after last tensor", offset, "eof")
    return tensors

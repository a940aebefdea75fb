"""On-disk formats: atomic writes, depth maps, PNG images, PLY point clouds.

Depth files are binary little-endian: magic ``AGD1``, u32 width, u32 height,
then width*height float32 meters in row-major order.  Sky is stored as 0.0
(the in-memory renderer uses +inf; see render.RenderOutput).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

DEPTH_MAGIC = b"AGD1"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj: dict) -> None:
    atomic_write_bytes(path, json.dumps(obj, indent=2).encode("utf-8") + b"\n")


def read_json(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_depth(path: str | Path, depth: np.ndarray) -> None:
    """Store a depth map; +inf (sky) is mapped to 0.0."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DataError(f"depth must be 2-D, got shape {depth.shape}")
    out = np.where(np.isfinite(depth), depth, 0.0).astype("<f4")
    h, w = out.shape
    header = DEPTH_MAGIC + struct.pack("<II", w, h)
    atomic_write_bytes(path, header + out.tobytes(order="C"))


def read_depth(path: str | Path) -> np.ndarray:
    """Load a depth map as float32; sky pixels come back as 0.0."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != DEPTH_MAGIC:
        raise DataError(f"{path}: not a depth file (bad magic)")
    w, h = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * w * h
    if len(data) != expected:
        raise DataError(f"{path}: truncated depth file ({len(data)} bytes, expected {expected})")
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w).copy()


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Write uint8 grayscale (H,W) or RGB (H,W,3)."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise DataError(f"PNG image must be uint8, got {image.dtype}")
    if image.ndim == 2:
        pil = Image.fromarray(image, mode="L")
    elif image.ndim == 3 and image.shape[2] == 3:
        pil = Image.fromarray(image, mode="RGB")
    else:
        raise DataError(f"PNG image must be (H,W) or (H,W,3), got {image.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        pil.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as pil:
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB")
        return np.asarray(pil).copy()


def write_ply(path: str | Path, positions: np.ndarray, colors: np.ndarray) -> None:
    """Binary little-endian PLY: x,y,z float32 + red,green,blue uchar."""
    positions = np.asarray(positions, dtype="<f4")
    colors = np.asarray(colors)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise DataError(f"positions must be (N,3), got {positions.shape}")
    if colors.shape != positions.shape:
        raise DataError(f"colors shape {colors.shape} does not match positions {positions.shape}")
    if colors.dtype != np.uint8:
        colors = np.clip(np.round(np.asarray(colors, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    n = len(positions)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    rec = np.zeros(n, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
    rec["xyz"] = positions
    rec["rgb"] = colors
    atomic_write_bytes(path, header.encode("ascii") + rec.tobytes())


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read the PLY layout written by write_ply; returns (positions f32, colors u8)."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise DataError(f"{path}: not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise DataError(f"{path}: unsupported PLY format")
    n = None
    props = []
    for line in lines:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("property"):
            props.append(tuple(line.split()[1:]))
    expected = [
        ("float", "x"), ("float", "y"), ("float", "z"),
        ("uchar", "red"), ("uchar", "green"), ("uchar", "blue"),
    ]
    if n is None or props != expected:
        raise DataError(f"{path}: unsupported PLY vertex layout")
    body = data[end + len(b"end_header\n"):]
    if len(body) != n * 15:
        raise DataError(f"{path}: truncated PLY body")
    rec = np.frombuffer(body, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)], count=n)
    return rec["xyz"].copy(), rec["rgb"].copy()

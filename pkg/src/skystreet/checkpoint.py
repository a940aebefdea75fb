"""Checkpoint container shared by the diffusion and splat trainers.

Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
then the raw float32 little-endian blobs back to back.  The header carries
free-form metadata (config echo, seeds, iteration count) plus the array
manifest (names and shapes, in blob order).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .formats import atomic_write_bytes

CHECKPOINT_MAGIC = b"SSCKPT01"


def save_checkpoint(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": manifest}).encode("utf-8")
    atomic_write_bytes(
        path, CHECKPOINT_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)
    )


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}") from e
    offset = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        blob = data[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise DataError(f"{path}: truncated blob for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes after blobs")
    return header["meta"], arrays

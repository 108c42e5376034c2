"""Checkpoint container: a directory of named-parameter blobs plus manifest.json.

Each blob file is a self-describing map of parameter name -> (shape, float32
array), little-endian throughout:

    magic "SRTBLOB1" | u32 entry count
    per entry (names sorted): u32 name_len | name utf-8 | u32 ndim | u32 dims[] | f32 data

Entries are written in sorted-name order so that load-then-save is byte-stable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInput

MAGIC = b"SRTBLOB1"
MANIFEST_NAME = "manifest.json"


def save_blob(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_blob(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise InvalidInput(f"{path}: not a parameter blob")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off: off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        out[name] = arr.copy()
    if off != len(data):
        raise InvalidInput(f"{path}: {len(data) - off} trailing bytes")
    return out


def save_manifest(dirpath: str | Path, manifest: dict) -> None:
    path = Path(dirpath) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", "utf-8")


def load_manifest(dirpath: str | Path) -> dict:
    path = Path(dirpath) / MANIFEST_NAME
    if not path.exists():
        raise InvalidInput(f"{dirpath}: no {MANIFEST_NAME}")
    return json.loads(path.read_text("utf-8"))

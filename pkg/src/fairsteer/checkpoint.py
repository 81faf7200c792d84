"""Binary checkpoint format shared by all trained components.

Layout: 8-byte magic+version header, an 8-byte little-endian manifest length,
a JSON manifest (kind, metadata, tensor names/shapes), then the tensor
payloads as flat little-endian float64 arrays in manifest order. The manifest
is serialized with sorted keys and no whitespace, so identical models produce
identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"FSCK"
FORMAT_VERSION = 1


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(path: str | Path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Serialize named float64 tensors plus JSON-safe metadata to `path`."""
    path = Path(path)
    names = sorted(tensors)
    manifest = {
        "kind": kind,
        "meta": meta,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, FORMAT_VERSION.to_bytes(4, "little"), len(blob).to_bytes(8, "little"), blob]
    for n in names:
        parts.append(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read a checkpoint, returning (kind, meta, tensors)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    blob_len = int.from_bytes(raw[8:16], "little")
    manifest = json.loads(raw[16 : 16 + blob_len].decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    offset = 16 + blob_len
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ValueError(f"{path}: truncated tensor payload for {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor payload")
    return manifest["kind"], manifest["meta"], tensors

"""Binary checkpoints: ``TGFC`` magic, version, JSON header, float64 payload.

Layout::

    b"TGFC" | u32 version | u32 header length | header (UTF-8 JSON) | payload

The header carries a manifest of ``{name, shape, offset}`` entries whose
offsets index the little-endian float64 payload in bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import MissingInputError, ShapeError

__all__ = ["save_checkpoint", "load_checkpoint", "CKPT_MAGIC", "CKPT_VERSION"]

CKPT_MAGIC = b"TGFC"
CKPT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_checkpoint(path: str | Path, header: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    meta = dict(header)
    meta["manifest"] = manifest
    meta["payload_bytes"] = offset
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise ShapeError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise ShapeError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise ShapeError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    payload = raw[_PREFIX.size + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise ShapeError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    arrays = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = entry["offset"] + 8 * count
        if end > len(payload):
            raise ShapeError(f"{path}: entry {entry['name']!r} runs past the payload")
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
            .astype(np.float64)
            .reshape(shape)
        )
    return header, arrays

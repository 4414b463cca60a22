"""Versioned container: JSON header followed by a float64 parameter blob.

Layout: ``b"SPFC"``, uint32 version, uint64 header length, UTF-8 JSON header,
then little-endian float64 arrays back to back. The header lists every array
as ``{"name", "shape", "offset"}`` with offsets counted in float64 elements.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SPFC"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save(path, header: dict, arrays: dict[str, np.ndarray]):
    index = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {**header, "arrays": index, "version": VERSION}
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
        fh.write(head)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: not a checkpoint (too short)")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + head_len
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    blob = np.frombuffer(raw[start:], dtype="<f8")
    arrays = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"]))
        chunk = blob[entry["offset"]:entry["offset"] + size]
        if chunk.size != size:
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = chunk.reshape(entry["shape"]).copy()
    return header, arrays

"""Flat binary checkpoint format.

Layout::

    u8  version (=1)
    u32 manifest length in bytes (little-endian)
    manifest: UTF-8 JSON list of {"name", "shape", "offset"}; offsets in bytes
              from the start of the data section
    data: little-endian float32 values, concatenated in manifest order
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

VERSION = 1


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    head = json.dumps(manifest, separators=(",", ":")).encode()
    return struct.pack("<BI", VERSION, len(head)) + head + b"".join(chunks)


def loads(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    version, n = struct.unpack_from("<BI", buf)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = 5 + n
    manifest = json.loads(buf[5:start].decode())
    out = OrderedDict()
    for entry in manifest:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        a = np.frombuffer(buf, dtype="<f4", count=count, offset=start + entry["offset"])
        out[entry["name"]] = a.reshape(entry["shape"]).astype(np.float32)
    return out


def save(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())

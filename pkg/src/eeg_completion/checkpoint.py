"""Binary container for ordered named float64 tensors.

Layout::

    b"EEGCKPT/1\\n"
    uint64 LE   length L of the metadata block
    L bytes     UTF-8 JSON, sorted keys: {"meta": ..., "tensors": [[name, shape], ...]}
    tensors     each as little-endian float64, row-major, in index order

Reloading gives bit-identical arrays. Writing the same content twice gives
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict

import numpy as np

__all__ = ["MAGIC", "CheckpointError", "save_tensors", "load_tensors", "dumps", "loads", "file_hash"]

MAGIC = b"EEGCKPT/1\n"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    index = []
    blobs = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append([name, list(a.shape)])
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": index}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def loads(data: bytes) -> tuple[OrderedDict[str, np.ndarray], dict]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic / version string)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        head = json.loads(data[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    pos += n
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape in head["tensors"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * count
        if end > len(data):
            raise CheckpointError(f"truncated tensor {name!r}")
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos = end
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return out, head["meta"]


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    data = dumps(tensors, meta)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_tensors(path) -> tuple[OrderedDict[str, np.ndarray], dict]:
    with open(os.fspath(path), "rb") as fh:
        return loads(fh.read())


def file_hash(path) -> str:
    with open(os.fspath(path), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()

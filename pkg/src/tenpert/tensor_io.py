"""Binary tensor files.

Layout, little-endian, no padding::

    b"DTEN" | u16 version (=1) | u16 order N | N x u64 dims | prod(dims) x f64 values

Values are row-major (last mode fastest).
"""
from __future__ import annotations

import math
import os
import struct

import numpy as np

MAGIC = b"DTEN"
VERSION = 1
_HEAD = struct.Struct("<4sHH")
_U64_MAX = 2**64 - 1


class TensorFileError(ValueError):
    """Malformed or truncated tensor file."""


def write_tensor(path, T) -> None:
    arr = np.asarray(T, dtype="<f8")
    if arr.ndim < 1:
        raise TensorFileError("tensor order must be at least 1")
    arr = np.ascontiguousarray(arr)
    if arr.ndim > 0xFFFF:
        raise TensorFileError(f"order {arr.ndim} does not fit in u16")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise TensorFileError("file too short for a header")
        magic, version, order = _HEAD.unpack(head)
        if magic != MAGIC:
            raise TensorFileError(f"bad magic {magic!r}")
        if version != VERSION:
            raise TensorFileError(f"unsupported version {version}")
        if order < 1:
            raise TensorFileError("tensor order must be at least 1")
        raw = fh.read(8 * order)
        if len(raw) < 8 * order:
            raise TensorFileError("truncated dims")
        dims = struct.unpack(f"<{order}Q", raw)
        if any(d < 1 for d in dims):
            raise TensorFileError(f"dims must be positive, got {dims}")
        count = math.prod(dims)
        if count > _U64_MAX // 8:
            raise TensorFileError(f"dims {dims} overflow the payload size")
        offset = _HEAD.size + 8 * order
        if size - offset < 8 * count:
            raise TensorFileError(f"truncated payload: need {8 * count} bytes, have {size - offset}")
        if size - offset > 8 * count:
            raise TensorFileError(f"{size - offset - 8 * count} trailing bytes after payload")
        data = np.fromfile(fh, dtype="<f8", count=count)
    return data.astype(np.float64, copy=False).reshape(dims)

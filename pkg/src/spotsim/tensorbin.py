"""TensorBin v1: the repo's int16 tensor container.

Layout: ``b"STNS"``, version (1), dtype (0 = int16), rank, three zero
bytes, ``rank`` little-endian u32 dims, then the little-endian int16
payload with the last dimension fastest.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STNS"
VERSION = 1
DTYPE_INT16 = 0
HEADER = 10


def dumps(a) -> bytes:
    a = np.asarray(a)
    if a.dtype != np.int16:
        raise TypeError(f"TensorBin stores int16 only, got {a.dtype}")
    if a.ndim > 255:
        raise ValueError("rank too large")
    head = MAGIC + bytes([VERSION, DTYPE_INT16, a.ndim, 0, 0, 0])
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return head + dims + np.ascontiguousarray(a).astype("<i2").tobytes()


def loads(data: bytes) -> np.ndarray:
    if len(data) < HEADER or data[:4] != MAGIC:
        raise ValueError("not a TensorBin file (bad magic)")
    version, dtype, rank = data[4], data[5], data[6]
    if version != VERSION:
        raise ValueError(f"unsupported TensorBin version {version}")
    if dtype != DTYPE_INT16:
        raise ValueError(f"unsupported dtype code {dtype}")
    if data[7:10] != b"\0\0\0":
        raise ValueError("reserved header bytes must be zero")
    start = HEADER + 4 * rank
    if len(data) < start:
        raise ValueError("TensorBin header truncated")
    dims = struct.unpack_from(f"<{rank}I", data, HEADER)
    n = int(np.prod(dims, dtype=np.int64))
    if len(data) - start != 2 * n:
        raise ValueError(f"payload has {len(data) - start} bytes, expected {2 * n}")
    return np.frombuffer(data, dtype="<i2", offset=start).astype(np.int16).reshape(dims)


def save(path, a) -> None:
    Path(path).write_bytes(dumps(a))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())

"""Little-endian binary tensor encoding (``SFT1``)."""
from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"SFT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class FormatError(ValueError):
    pass


def write_tensor(f: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}; only float32/float64 are encodable")
    code = _CODES[arr.dtype]
    f.write(MAGIC)
    f.write(struct.pack("<BI", code, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("truncated tensor stream")
    return buf


def read_tensor(f: BinaryIO) -> np.ndarray:
    if _read_exact(f, 4) != MAGIC:
        raise FormatError("bad tensor magic, expected SFT1")
    code, rank = struct.unpack("<BI", _read_exact(f, 5))
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read_exact(f, count * dtype.itemsize), dtype=dtype)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def dumps(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def loads(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))

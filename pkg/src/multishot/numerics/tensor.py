"""Binary tensor format.

Layout (little-endian)::

    b"MSVT" | u8 precision (0 = float32, 1 = float64) | u8 rank | rank * u64 dims | data
"""
import struct

import numpy as np

from ..errors import ShapeError, ValidationError

MAGIC = b"MSVT"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_FLAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def write_tensor(fh, arr):
    """Write one array to an open binary file; returns bytes written."""
    arr = np.asarray(arr)
    if arr.dtype not in _FLAGS:
        raise ValidationError(f"unsupported tensor dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ShapeError("rank exceeds 255")
    header = MAGIC + struct.pack("<BB", _FLAGS[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[_FLAGS[arr.dtype]]).tobytes()
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def read_tensor(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValidationError(f"bad tensor magic {magic!r}")
    flag, rank = struct.unpack("<BB", fh.read(2))
    if flag not in _DTYPES:
        raise ValidationError(f"unknown precision flag {flag}")
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    dtype = _DTYPES[flag]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ValidationError("truncated tensor payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def save_tensor(path, arr):
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)

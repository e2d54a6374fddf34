"""Dense float64 tensors and the RMX1 binary exchange format.

Tensors are plain ``numpy.ndarray`` objects with dtype float64 in C order.
RMX1 layout (all little-endian)::

    b"RMX1" | u32 rank | rank x u64 dims | row-major f64 payload
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

from romda.errors import ContractError, NumericError

MAGIC = b"RMX1"


def as_tensor(value, name: str = "tensor") -> np.ndarray:
    """Return ``value`` as a finite, C-contiguous float64 array."""
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def encode_rmx(array) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f8")
    if any(d <= 0 for d in arr.shape):
        raise ContractError(f"RMX1 dims must be positive, got {arr.shape}")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_rmx(buf, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one RMX1 tensor from ``buf`` at ``offset``; return (array, end offset)."""
    view = memoryview(buf)
    if bytes(view[offset:offset + 4]) != MAGIC:
        raise ContractError(f"bad RMX1 magic at offset {offset}")
    (rank,) = struct.unpack_from("<I", view, offset + 4)
    pos = offset + 8
    dims = struct.unpack_from(f"<{rank}Q", view, pos)
    pos += 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = pos + 8 * count
    if end > len(view):
        raise ContractError(f"truncated RMX1 payload: need {end} bytes, have {len(view)}")
    arr = np.frombuffer(view[pos:end], dtype="<f8").astype(np.float64).reshape(dims)
    return arr, end


def write_rmx(path, array) -> Path:
    path = Path(path)
    data = encode_rmx(array)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write tensor file {path}: {exc}") from exc
    return path


def read_rmx(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor file {path}: {exc}") from exc
    arr, end = decode_rmx(data)
    if end != len(data):
        raise ContractError(f"{path}: {len(data) - end} trailing bytes after RMX1 tensor")
    return arr


def rmx_bytes_to_stream(arrays) -> bytes:
    """Concatenate several arrays as back-to-back RMX1 blocks."""
    out = io.BytesIO()
    for arr in arrays:
        out.write(encode_rmx(arr))
    return out.getvalue()

"""Binary tensor files: little-endian float32 payload behind a fixed 16-byte header.

Header layout (16 bytes, little-endian):
    bytes 0-1   magic ``b"T1"``
    bytes 2-3   rank as uint16 (1..3)
    bytes 4-15  three uint32 dims; entries past ``rank`` must be 1

The payload is the C-order float32 buffer of the tensor. The format
round-trips bit-exactly, which the corpus regeneration guarantees rely on.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"T1"
MAX_RANK = 3
_HEADER = struct.Struct("<2sHIII")


class TensorFormatError(ValueError):
    """Raised when a tensor file is malformed or its header disagrees with the payload."""


def save_tensor(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values)
    # rank check must precede ascontiguousarray, which promotes 0-d to 1-d
    if values.ndim < 1 or values.ndim > MAX_RANK:
        raise TensorFormatError(f"rank {values.ndim} outside supported range 1..{MAX_RANK}")
    arr = np.ascontiguousarray(values, dtype="<f4")
    dims = list(arr.shape) + [1] * (MAX_RANK - arr.ndim)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.ndim, *dims))
        fh.write(arr.tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise TensorFormatError(f"{path}: truncated header")
        magic, rank, d0, d1, d2 = _HEADER.unpack(header)
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}")
        if not 1 <= rank <= MAX_RANK:
            raise TensorFormatError(f"{path}: bad rank {rank}")
        dims = (d0, d1, d2)[:rank]
        if any(d == 0 for d in dims) or any(d != 1 for d in (d0, d1, d2)[rank:]):
            raise TensorFormatError(f"{path}: inconsistent dims {(d0, d1, d2)} for rank {rank}")
        count = int(np.prod(dims))
        payload = fh.read()
    if len(payload) != 4 * count:
        raise TensorFormatError(
            f"{path}: payload holds {len(payload) // 4} floats, header declares {count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

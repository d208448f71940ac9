"""Binary tensor container.

Layout (all little-endian)::

    b"FRNT" | version:u16 | rank:u16 | extents:u64 * rank | payload:f64 * prod(extents)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import ContractViolation

MAGIC = b"FRNT"
VERSION = 1


def write_tensor(stream: BinaryIO, array) -> None:
    arr = np.asarray(array, dtype="<f8", order="C")
    stream.write(MAGIC)
    stream.write(struct.pack("<HH", VERSION, arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    stream.write(arr.tobytes(order="C"))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise ContractViolation(f"truncated tensor container: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(stream: BinaryIO) -> np.ndarray:
    if _read_exact(stream, 4) != MAGIC:
        raise ContractViolation("not a FRNT tensor container")
    version, rank = struct.unpack("<HH", _read_exact(stream, 4))
    if version != VERSION:
        raise ContractViolation(f"unsupported container version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(stream, 8 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(stream, 8 * count)
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def tensor_to_bytes(array) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(path: Union[str, Path], array) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)

"""LMT1 binary tensor container.

Layout: the 4 magic bytes ``LMT1``, a little-endian u32 rank, ``rank``
little-endian u32 extents, then the row-major payload as little-endian f32.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"LMT1"


class LMTFormatError(ValueError):
    pass


def to_bytes(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    head = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def read_from(stream: BinaryIO) -> np.ndarray:
    """Read one LMT1 tensor from ``stream``, leaving it positioned after the payload."""
    magic = stream.read(4)
    if magic != MAGIC:
        raise LMTFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw = stream.read(4)
    if len(raw) != 4:
        raise LMTFormatError("truncated header (rank)")
    (rank,) = struct.unpack("<I", raw)
    raw = stream.read(4 * rank)
    if len(raw) != 4 * rank:
        raise LMTFormatError("truncated header (extents)")
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape)) if rank else 1
    payload = stream.read(4 * count)
    if len(payload) != 4 * count:
        raise LMTFormatError(f"truncated payload: expected {4 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def from_bytes(blob: bytes) -> np.ndarray:
    stream = io.BytesIO(blob)
    arr = read_from(stream)
    if stream.read(1):
        raise LMTFormatError("trailing bytes after tensor payload")
    return arr


def save(path, array) -> None:
    path = Path(path)
    try:
        path.write_bytes(to_bytes(array))
    except OSError as exc:
        raise OSError(f"cannot write LMT1 tensor to {path}: {exc.strerror}") from exc


def load(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read LMT1 tensor from {path}: {exc.strerror}") from exc
    try:
        return from_bytes(blob)
    except LMTFormatError as exc:
        raise LMTFormatError(f"{path}: {exc}") from None

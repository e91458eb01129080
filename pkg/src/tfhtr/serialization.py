"""Binary tensor records.

Layout (little-endian): rank as u64, each extent as u64, then the raw
IEEE-754 payload in row-major order. Element width is not stored; the
caller knows it (checkpoints record their precision in the JSON header).
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import ParseError


def write_array(stream: BinaryIO, array: np.ndarray, dtype=None) -> None:
    arr = np.asarray(array)
    dtype = np.dtype(dtype or arr.dtype).newbyteorder("<")
    stream.write(struct.pack("<Q", arr.ndim))
    if arr.ndim:
        stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    stream.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_array(stream: BinaryIO, dtype) -> np.ndarray:
    dtype = np.dtype(dtype).newbyteorder("<")
    head = stream.read(8)
    if len(head) != 8:
        raise ParseError("truncated tensor record: missing rank")
    (rank,) = struct.unpack("<Q", head)
    if rank > 32:
        raise ParseError(f"implausible tensor rank {rank}")
    raw = stream.read(8 * rank)
    if len(raw) != 8 * rank:
        raise ParseError("truncated tensor record: missing extents")
    shape = struct.unpack(f"<{rank}Q", raw) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise ParseError(f"truncated tensor payload for shape {shape}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

"""Binary parameter checkpoints.

Layout (little-endian): magic ``CFP1``, then for each tensor until EOF:
name byte length (u32), UTF-8 name, rank (u32), dims (u64 each), values
(float64, row-major).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"CFP1"


def save_params(state: dict, path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        for name, value in state.items():
            arr = np.ascontiguousarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ParseError("missing CFP1 magic", offset=0)
    pos, out = 4, {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (n,) = struct.unpack("<I", take(4, "name length"))
        name = take(n, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        count = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(take(8 * count, "values"), dtype="<f8").astype(np.float64).reshape(dims)
    return out

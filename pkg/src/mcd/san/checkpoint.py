"""
Model checkpoint, little-endian::

    b"MCDW"  u32 version
    repeated until EOF:
        u32 name_len, name (utf-8), u32 rank, rank * u32 extents,
        float32 payload (row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"MCDW"
VERSION = 1


def dumps(params: dict) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise DataError("not an MCDW checkpoint (bad magic)")
    if len(data) < 8:
        raise DataError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos, params = 8, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 4 * count > len(data):
                raise DataError(f"truncated payload for tensor {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            params[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise DataError(f"corrupt checkpoint: {exc}") from exc
    return params


def save(path, params: dict) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> dict:
    try:
        return loads(Path(path).read_bytes())
    except FileNotFoundError as exc:
        raise DataError(f"model file not found: {path}") from exc

"""Binary container for named arrays (checkpoints and preprocessed tensors).

Layout, all integers little-endian::

    b"MMEV"                 magic
    u32 version             currently 1
    u32 count               number of named arrays
    per array:
        u32 name_len, name bytes (utf-8)
        u8  dtype code      1 = float32, 2 = float64, 3 = int64
        u32 rank
        u64 extent x rank
        raw values, little-endian, row-major

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import ParseError
from .tensor import Tensor

MAGIC = b"MMEV"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_KINDS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}


def dumps(arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
        code = _KINDS.get(arr.dtype)
        if code is None:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    return b"".join(parts)


def loads(blob: bytes, source="<bytes>") -> dict:
    view = memoryview(blob)
    pos = 0

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise ParseError(source, pos, "truncated file")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    if bytes(view[:4]) != MAGIC:
        raise ParseError(source, 0, "bad magic bytes")
    pos = 4
    version, count = read("<II")
    if version != VERSION:
        raise ParseError(source, 4, f"unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = read("<I")
        if pos + name_len > len(view):
            raise ParseError(source, pos, "truncated name")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        code, rank = read("<BI")
        if code not in _CODES:
            raise ParseError(source, pos, f"unknown dtype code {code}")
        shape = read(f"<{rank}Q") if rank else ()
        dtype = _CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(view):
            raise ParseError(source, pos, f"truncated values for {name!r}")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(shape)
        out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(view):
        raise ParseError(source, pos, "trailing bytes")
    return out


def save(path, arrays: dict) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> dict:
    return loads(Path(path).read_bytes(), source=path)

"""Binary grid files.

``OFF1``: magic, then little-endian u32 ``h, w, channels``, then
``h * w * channels`` little-endian float32 values, row-major, channel-minor.
``OFI1``: same header, u32 payload (agent-ID rasters).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

FLOAT_MAGIC = b"OFF1"
ID_MAGIC = b"OFI1"
_HEADER = struct.Struct("<4sIII")
_DTYPES = {FLOAT_MAGIC: np.dtype("<f4"), ID_MAGIC: np.dtype("<u4")}


class GridFormatError(ValueError):
    """Raised for a malformed grid file; ``offset`` is the offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, text.encode())


def encode_grid(array: np.ndarray, magic: bytes = FLOAT_MAGIC) -> bytes:
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[..., None]
    if array.ndim != 3:
        raise ValueError(f"expected (h, w) or (h, w, c) array, got shape {array.shape}")
    h, w, c = array.shape
    if magic == ID_MAGIC and (array.min(initial=0) < 0 or array.max(initial=0) > 0xFFFFFFFF):
        raise ValueError("agent IDs must fit in u32")
    payload = np.ascontiguousarray(array, dtype=_DTYPES[magic]).tobytes()
    return _HEADER.pack(magic, h, w, c) + payload


def decode_grid(data: bytes, expect: bytes | None = None) -> tuple[bytes, np.ndarray]:
    """Parse a grid file; returns ``(magic, array)`` with array shape (h, w, c)."""
    if len(data) < _HEADER.size:
        raise GridFormatError("truncated header", len(data))
    magic, h, w, c = _HEADER.unpack_from(data)
    if magic not in _DTYPES:
        raise GridFormatError(f"bad magic {magic!r}", 0)
    if expect is not None and magic != expect:
        raise GridFormatError(f"expected {expect!r} file, found {magic!r}", 0)
    for i, (name, v) in enumerate((("height", h), ("width", w), ("channels", c))):
        if v == 0:
            raise GridFormatError(f"{name} must be positive", 4 + 4 * i)
    dtype = _DTYPES[magic]
    need = h * w * c * dtype.itemsize
    have = len(data) - _HEADER.size
    if have != need:
        raise GridFormatError(f"payload is {have} bytes, header implies {need}",
                              _HEADER.size + min(have, need))
    arr = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(h, w, c)
    return magic, arr


def write_grid(path, array: np.ndarray) -> None:
    atomic_write_bytes(path, encode_grid(array, FLOAT_MAGIC))


def write_ids(path, ids: np.ndarray) -> None:
    atomic_write_bytes(path, encode_grid(ids, ID_MAGIC))


def read_grid(path) -> np.ndarray:
    """Read an OFF1 file as float64; single-channel grids come back as (h, w)."""
    _, arr = decode_grid(Path(path).read_bytes(), FLOAT_MAGIC)
    arr = arr.astype(np.float64)
    return arr[..., 0] if arr.shape[-1] == 1 else arr


def read_ids(path) -> np.ndarray:
    _, arr = decode_grid(Path(path).read_bytes(), ID_MAGIC)
    return arr[..., 0].astype(np.int64)

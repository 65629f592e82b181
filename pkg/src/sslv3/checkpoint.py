"""Binary checkpoint format for a :class:`ParameterStore`.

Layout (little-endian)::

    b"SSLV3CK1"  u32 version  u32 entry_count
    per entry: u32 name_len, name (UTF-8), u8 group, u8 dtype (0=f32, 1=f64),
               u32 rank, rank x u64 extents, raw data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .tensor import GROUPS, ParameterStore, Tensor

MAGIC = b"SSLV3CK1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"f32": 0, "f64": 1}


def to_bytes(store: ParameterStore, dtype: str = "f64") -> bytes:
    code = _DTYPE_CODES[dtype]
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BBI", GROUPS.index(store.group_of(name)), code, t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> ParameterStore:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic bytes")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    store = ParameterStore()
    for _ in range(count):
        (n,) = r.unpack("<I")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("entry name is not UTF-8") from None
        group, code, rank = r.unpack("<BBI")
        if group >= len(GROUPS) or code not in _DTYPES:
            raise CheckpointError(f"entry {name!r}: bad group or dtype tag")
        shape = r.unpack(f"<{rank}Q")
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(size * dt.itemsize), dtype=dt).reshape(shape).astype(np.float64)
        try:
            store.add(name, Tensor(data), GROUPS[group])
        except ValueError as exc:
            raise CheckpointError(str(exc)) from None
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last entry")
    return store


def checkpoint_save(store: ParameterStore, path, dtype: str = "f64") -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(store, dtype))
    return path


def checkpoint_load(path) -> ParameterStore:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return from_bytes(buf)


def check_compatible(loaded: ParameterStore, reference: ParameterStore) -> None:
    """Raise unless both stores hold the same names, groups and shapes."""
    if loaded.names() != reference.names():
        missing = set(reference.names()) ^ set(loaded.names())
        raise CheckpointError(f"parameter names differ: {sorted(missing)[:5]}")
    for name, t in reference.items():
        if loaded[name].shape != t.shape or loaded.group_of(name) != reference.group_of(name):
            raise CheckpointError(f"{name}: checkpoint {loaded[name].shape} vs model {t.shape}")

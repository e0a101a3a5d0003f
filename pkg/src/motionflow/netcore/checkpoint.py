"""Binary parameter checkpoints.

Layout: magic ``FMCK``, version ``u32``, then per tensor: name length
``u32``, UTF-8 name, rank ``u32``, extents ``u64`` each, raw little-endian
float64 values. All integers little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .layers import Module

MAGIC = b"FMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(data):
                raise CheckpointError(f"{path}: truncated tensor '{name}'")
            out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def save_model(path, model: Module, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = {k: p.data for k, p in model.parameters().items()}
    for k, v in (extra or {}).items():
        arrays[k] = np.asarray(v, dtype=np.float64)
    save_arrays(path, arrays)


def load_model(path, model: Module) -> dict[str, np.ndarray]:
    """Copy stored values into ``model``; returns entries that are not parameters."""
    arrays = load_arrays(path)
    params = model.parameters()
    missing = [k for k in params if k not in arrays]
    if missing:
        raise CheckpointError(f"{path}: missing parameters {missing}")
    for k, p in params.items():
        if arrays[k].shape != p.data.shape:
            raise CheckpointError(f"{path}: '{k}' has shape {arrays[k].shape}, model expects {p.data.shape}")
        p.data[...] = arrays[k]
    return {k: v for k, v in arrays.items() if k not in params}

"""Flat binary parameter checkpoints.

Layout: magic ``RNN1``, version u32, parameter count u32, then per parameter
a u16 name length + UTF-8 name, rank u8, u32 dims, and little-endian f32
values.  Parameter order is the model's declaration order, so save/load is
deterministic for a given architecture.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = ["save_checkpoint", "load_checkpoint", "read_checkpoint"]

MAGIC = b"RNN1"
VERSION = 1


def save_checkpoint(model, path) -> None:
    named = list(model.named_parameters())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(named)))
        for name, param in named:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dims = param.shape
            fh.write(struct.pack("<B", len(dims)))
            for d in dims:
                fh.write(struct.pack("<I", d))
            fh.write(param.data.astype("<f4").tobytes())


def read_checkpoint(path) -> list:
    """Raw (name, array) pairs in file order."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        out = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            size = int(np.prod(dims)) if dims else 1
            values = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(dims)
            out.append((name, values.copy()))
    return out


def load_checkpoint(model, path) -> None:
    """Load values into a matching architecture; names and shapes must agree."""
    stored = dict(read_checkpoint(path))
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(stored))
    extra = sorted(set(stored) - set(named))
    if missing or extra:
        raise ConfigError(f"checkpoint mismatch: missing={missing[:5]} unexpected={extra[:5]}")
    for name, param in named.items():
        values = stored[name]
        if values.shape != param.shape:
            raise ConfigError(f"parameter {name}: checkpoint shape {values.shape} "
                              f"!= model shape {param.shape}")
        param.data = values.astype(param.dtype)

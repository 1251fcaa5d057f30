"""Binary named-tensor checkpoints.

Layout (little-endian)::

    b"EGEU"  u32 version=1  u32 record_count
    per record: u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims, float32 payload
"""

from __future__ import annotations

import os
import struct
from typing import Iterable

import numpy as np

from .model import EGEUNet, ModelConfig, build

MAGIC = b"EGEU"
VERSION = 1


class CheckpointError(Exception):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def encode(records: Iterable[tuple[str, np.ndarray]]) -> bytes:
    records = list(records)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode(buf: bytes) -> list[tuple[str, np.ndarray]]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"checkpoint ends at byte {len(buf)}, needed {pos + n}")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise MagicError("not an EGEU checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    records = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        records.append((name, data.astype(np.float32)))
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after the last record")
    return records


def save_checkpoint(model: EGEUNet, path) -> None:
    data = encode((name, p.data) for name, p in model.named_parameters())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_records(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def load_checkpoint(path, cfg: ModelConfig | None = None, dtype=np.float32) -> EGEUNet:
    """Build a model from ``cfg`` and fill it from ``path``, validating every name and shape."""
    model = build(cfg or ModelConfig(), dtype=dtype)
    records = read_records(path)
    expected = dict(model.named_parameters())
    names = [name for name, _ in records]
    if len(set(names)) != len(names):
        raise ShapeMismatchError("duplicate parameter names in checkpoint")
    missing = [n for n in expected if n not in set(names)]
    unknown = [n for n in names if n not in expected]
    if missing or unknown:
        raise ShapeMismatchError(f"parameter table mismatch: missing {missing[:5]}, unexpected {unknown[:5]}")
    for name, arr in records:
        p = expected[name]
        if arr.shape != p.shape:
            raise ShapeMismatchError(f"parameter {name!r}: checkpoint shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(dtype)
    return model

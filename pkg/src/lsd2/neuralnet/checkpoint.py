"""Binary parameter checkpoints.

Layout (little-endian)::

    b"LSD2CKPT"  uint32 version
    uint32 len, kind (utf-8)
    uint32 len, config record (utf-8 JSON)
    uint32 n_tensors
    n_tensors x [uint32 name_len, name, uint32 rank, rank x uint32 dim, float32 values]
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..fileio import atomic_write_bytes

MAGIC = b"LSD2CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointKindError(CheckpointError):
    """Checkpoint holds a different model kind than requested."""


def encode_checkpoint(kind: str, config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for text in (kind, json.dumps(config, sort_keys=True)):
        raw = text.encode("utf-8")
        out += [struct.pack("<I", len(raw)), raw]
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        out += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr).tobytes()]
    return b"".join(out)


def decode_checkpoint(data: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    try:
        return _decode(data)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def _decode(data: bytes):
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    texts = []
    for _ in range(2):
        (n,) = take("<I")
        texts.append(data[pos:pos + n].decode("utf-8"))
        pos += n
    kind, config = texts[0], json.loads(texts[1])
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (n,) = take("<I")
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        tensors[name] = arr.astype(np.float32)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return kind, config, tensors


def save_checkpoint(path, kind: str, config: dict, tensors: dict) -> None:
    atomic_write_bytes(path, encode_checkpoint(kind, config, tensors))


def load_checkpoint(path, expected_kind: str | None = None):
    with open(path, "rb") as fh:
        kind, config, tensors = decode_checkpoint(fh.read())
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointKindError(f"{path} holds a {kind!r} model, expected {expected_kind!r}")
    return kind, config, tensors

"""Versioned little-endian binary checkpoints.

Layout::

    magic      8 bytes  b"SGCKPT\\r\\n"
    version    u32
    cfg hash   32 bytes (sha256 digest of the trajectory-relevant config)
    meta       u32 length + UTF-8 JSON (config, vocab, scheduler, RNG, counters)
    n_tensors  u32
    records    u16 name length, name, u8 dtype code, u8 ndim, ndim x u32 dims, payload

All integers and payloads are little-endian. Tensors are stored verbatim so
a resumed run continues bit-for-bit.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, IncompatibleCheckpointError

MAGIC = b"SGCKPT\r\n"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.int64): 2}


@dataclass
class Checkpoint:
    config_hash: str
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), bytes.fromhex(ckpt.config_hash),
             struct.pack("<I", len(meta)), meta, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"cannot checkpoint {name} with dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:8] != MAGIC:
        raise IncompatibleCheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise IncompatibleCheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    cfg_hash = buf[off:off + 32].hex()
    off += 32
    (mlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    meta = json.loads(buf[off:off + mlen].decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
        off += n * dt.itemsize
    if off != len(buf):
        raise IncompatibleCheckpointError(f"{path}: trailing bytes after last record")
    return Checkpoint(config_hash=cfg_hash, meta=meta, tensors=tensors, version=version)

"""Binary checkpoint format.

Layout, all little-endian::

    b"WKFG"                    magic
    u16                        format version
    8 bytes                    vocab hash
    u32 + UTF-8 JSON           header: arch, vocab size, version id, parent id
    u64                        parameter count
    f64 * count                parameters
    u64                        checksum of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError
from .model import ArchConfig, PolicySnapshot, get_model

MAGIC = b"WKFG"
FORMAT_VERSION = 1


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def encode_snapshot(snapshot: PolicySnapshot) -> bytes:
    header = json.dumps({
        "arch": snapshot.arch.to_dict(),
        "vocab_size": snapshot.vocab_size,
        "version_id": snapshot.version_id,
        "parent_id": snapshot.parent_id,
    }, sort_keys=True).encode("utf-8")
    body = b"".join([
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        snapshot.vocab_hash,
        struct.pack("<I", len(header)), header,
        struct.pack("<Q", snapshot.n_params),
        np.ascontiguousarray(snapshot.params, dtype="<f8").tobytes(),
    ])
    return body + struct.pack("<Q", checksum64(body))


def decode_snapshot(data: bytes) -> PolicySnapshot:
    def need(n: int, pos: int) -> None:
        if pos + n > len(data):
            raise CorruptCheckpointError("checkpoint is truncated")

    need(4 + 2 + 8 + 4, 0)
    if data[:4] != MAGIC:
        raise CorruptCheckpointError("bad magic bytes")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported format version {version}")
    vocab_hash = data[6:14]
    (hlen,) = struct.unpack_from("<I", data, 14)
    pos = 18
    need(hlen + 8, pos)
    try:
        header = json.loads(data[pos: pos + hlen].decode("utf-8"))
        arch = ArchConfig(**header["arch"])
        vocab_size = int(header["vocab_size"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable header: {exc}") from None
    pos += hlen
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    need(8 * count + 8, pos)
    if len(data) != pos + 8 * count + 8:
        raise CorruptCheckpointError("trailing bytes after checksum")
    (stored,) = struct.unpack_from("<Q", data, pos + 8 * count)
    if stored != checksum64(data[: pos + 8 * count]):
        raise CorruptCheckpointError("checksum mismatch")
    if count != get_model(arch, vocab_size).n_params:
        raise CorruptCheckpointError("parameter count does not match architecture")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    params.flags.writeable = False
    return PolicySnapshot(arch, vocab_size, params, bytes(vocab_hash),
                          header["version_id"], header["parent_id"])


def save_snapshot(snapshot: PolicySnapshot, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_snapshot(snapshot))
    os.replace(tmp, path)
    return path


def load_snapshot(path: str | os.PathLike) -> PolicySnapshot:
    return decode_snapshot(Path(path).read_bytes())

"""Binary checkpoint format.

Layout, all little-endian::

    b"SGZCKPT1"                       8 bytes
    format version                    u16
    architecture fingerprint          u64
    epoch                             u32
    validation accuracy               f32
    tensor count                      u32
    per tensor: name length u16, UTF-8 name, rank u8, dims u32 * rank, f32 payload
    CRC-32 of every preceding byte    u32

The reader validates the whole file before building any object.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CompatibilityError

MAGIC = b"SGZCKPT1"
VERSION = 1
_HEADER = struct.Struct("<8sHQIfI")


@dataclass
class Checkpoint:
    fingerprint: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    val_accuracy: float = 0.0

    def check_compatible(self, net) -> None:
        expected = net.fingerprint()
        if self.fingerprint != expected:
            raise CompatibilityError(f"checkpoint fingerprint {self.fingerprint:016x} does not match "
                                     f"architecture fingerprint {expected:016x}")

    def load_into(self, net) -> None:
        self.check_compatible(net)
        net.load_state_dict(self.tensors)


def to_bytes(ck: Checkpoint) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, ck.fingerprint, ck.epoch, ck.val_accuracy, len(ck.tensors))]
    for name, arr in ck.tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size + 4:
        raise CheckpointError(f"file too short ({len(data)} bytes)")
    magic, version, fingerprint, epoch, acc, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: file is corrupted or truncated")
    pos = _HEADER.size
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if pos + size > len(body):
                raise CheckpointError(f"tensor {name!r} payload truncated")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed tensor table: {exc}") from None
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after tensor table")
    if len(tensors) != count:
        raise CheckpointError("duplicate tensor names")
    return Checkpoint(fingerprint, tensors, epoch, float(acc))


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Write atomically: the target path never holds a partial file."""
    path = Path(path)
    data = to_bytes(ck)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, net=None) -> Checkpoint:
    """Read and validate a checkpoint; with ``net`` also check fingerprint and tensor shapes."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    ck = from_bytes(data)
    if net is not None:
        ck.check_compatible(net)
        own = net.state_dict()
        if set(own) != set(ck.tensors):
            raise CompatibilityError("checkpoint tensor names differ from the architecture")
        for k, v in own.items():
            if v.shape != ck.tensors[k].shape:
                raise CompatibilityError(f"tensor {k}: checkpoint {ck.tensors[k].shape} vs network {v.shape}")
    return ck

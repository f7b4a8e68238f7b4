"""Binary container for named float64 tensors.

Layout (little-endian):
    magic "FLCP", version byte, u32 tensor count, then per tensor:
    u16 name length, name bytes (utf-8), u8 rank, u32 dims, f64 payload.

Round-trips are bit-exact; the same container is used for model
checkpoints and hypothesis dumps.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FLCP"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        # np.ascontiguousarray would promote 0-d arrays to 1-d; asarray
        # with C order preserves rank for exact shape round-trips
        arr = np.asarray(arr, dtype=np.float64, order="C")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(
                f"file truncated: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError(f"not a flowlift tensor file: {path}")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"unsupported container version {version} (expected {VERSION})")
    (count,) = r.unpack("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(8 * n)
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return out

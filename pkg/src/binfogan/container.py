"""Versioned binary container shared by checkpoints and raw-tensor datasets.

Layout (all integers little-endian)::

    b"BINFOGAN"            magic, 8 bytes
    u32 version
    u16 len + bytes        kind tag ("checkpoint", "tensors")
    u64 step
    u32 len + bytes        canonical text (UTF-8)
    u32 len + bytes        opaque blob
    u32 count              number of tensors, then per tensor:
        u16 len + bytes    name (UTF-8)
        u8 rank
        u64 * rank         extents
        f64 * prod(ext)    values, row-major

Nothing may follow the last tensor.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, VersionError

MAGIC = b"BINFOGAN"
VERSION = 1


@dataclass
class Container:
    kind: str
    step: int = 0
    text: str = ""
    blob: bytes = b""
    tensors: dict = field(default_factory=dict)


def encode(container):
    out = [MAGIC, struct.pack("<I", VERSION)]
    kind = container.kind.encode()
    out.append(struct.pack("<H", len(kind)) + kind)
    out.append(struct.pack("<Q", container.step))
    text = container.text.encode()
    out.append(struct.pack("<I", len(text)) + text)
    out.append(struct.pack("<I", len(container.blob)) + container.blob)
    out.append(struct.pack("<I", len(container.tensors)))
    for name, arr in container.tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated container reading {what}: need {n} bytes, "
                f"{len(self.data) - self.pos} available", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def text(self, fmt, what):
        start = self.pos
        (n,) = self.unpack(fmt, what + " length")
        raw = self.take(n, what)
        try:
            return raw.decode()
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8", start) from exc


def decode(data, kind=None):
    """Parse container bytes. Raises FormatError carrying the fault offset."""
    r = _Reader(bytes(data))
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad magic, not a BINFOGAN container", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionError(f"incompatible container version {version} (supported: {VERSION})",
                           len(MAGIC))
    found_kind = r.text("<H", "kind")
    if kind is not None and found_kind != kind:
        raise FormatError(f"expected a {kind!r} container, found {found_kind!r}", len(MAGIC) + 4)
    (step,) = r.unpack("<Q", "step")
    text = r.text("<I", "text section")
    (blob_len,) = r.unpack("<I", "blob length")
    blob = r.take(blob_len, "blob")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        name = r.text("<H", "tensor name")
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{rank}Q", f"extents of {name!r}")
        nbytes = 8 * int(np.prod(shape, dtype=np.uint64))
        values = np.frombuffer(r.take(nbytes, f"values of {name!r}"), dtype="<f8")
        tensors[name] = values.reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} unexpected trailing bytes", r.pos)
    return Container(found_kind, step, text, blob, tensors)

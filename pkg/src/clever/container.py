"""Named-tensor binary container used for checkpoints and dataset caches.

Layout (little-endian throughout)::

    magic        4 bytes  (b"CLVR" checkpoints, b"CLVD" datasets)
    version      u32
    header_len   u32
    header       header_len bytes of UTF-8 JSON
    n_records    u32
    record*      name_len u16, name, dtype u8, ndim u8, dims u32*ndim, payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}


@dataclass
class Container:
    magic: bytes
    header: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)
    version: int = VERSION


def _code(arr):
    key = (arr.dtype.kind, arr.dtype.itemsize)
    for code, ref in DTYPES.items():
        if (ref.kind, ref.itemsize) == key:
            return code, ref
    raise FormatError(f"unsupported tensor dtype {arr.dtype}")


def encode(c: Container) -> bytes:
    if len(c.magic) != 4:
        raise FormatError("magic must be 4 bytes")
    head = json.dumps(c.header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [c.magic, struct.pack("<II", c.version, len(head)), head, struct.pack("<I", len(c.tensors))]
    for name, arr in c.tensors.items():
        arr = np.asarray(arr)
        code, dt = _code(arr)
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


def save(path, c: Container) -> None:
    data = encode(c)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated {what} at byte offset {self.pos}: "
                              f"need {n} bytes, {len(self.buf) - self.pos} available")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes, magic: bytes, path="<bytes>") -> Container:
    r = _Reader(buf, path)
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    version, hlen = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version} (this build reads {VERSION})")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from None
    (n,) = r.unpack("<I", "record count")
    tensors = {}
    for _ in range(n):
        (nlen,) = r.unpack("<H", "record name length")
        name = r.take(nlen, "record name").decode("utf-8")
        code, ndim = r.unpack("<BB", f"record {name!r}")
        if code not in DTYPES:
            raise FormatError(f"{path}: record {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I", f"record {name!r} shape")
        dt = DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        payload = r.take(nbytes, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes after byte offset {r.pos}")
    return Container(magic, header, tensors, version)


def load(path, magic: bytes) -> Container:
    with open(path, "rb") as fh:
        return decode(fh.read(), magic, str(path))

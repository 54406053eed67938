"""DFBP binary tensor container.

Layout (all integers little-endian)::

    b"DFBP"            magic
    u32                format version (1)
    u32 + bytes        UTF-8 JSON header
    u32                tensor count
    per tensor:
        u32 + bytes    UTF-8 name
        u8             dtype code (0 = float32)
        u32            ndim
        u64 * ndim     dims
        payload        row-major little-endian values

The JSON header is written with sorted keys and no whitespace so that
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

MAGIC = b"DFBP"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4")}


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class DTypeError(ContainerError):
    pass


def encode_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def dumps(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blob = encode_header(header)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BI", 0, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedError(
                f"truncated while reading {what}: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionError(f"unsupported format version {version}, expected {VERSION}")
    (hlen,) = r.unpack("<I", "header length")
    header = json.loads(r.take(hlen, "header").decode())
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I", "name length")
        name = r.take(nlen, "name").decode()
        code, ndim = r.unpack("<BI", f"dtype/ndim of {name}")
        if code not in DTYPE_CODES:
            raise DTypeError(f"tensor {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}Q", f"dims of {name}")
        dt = DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = r.take(nbytes, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise ContainerError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return header, tensors


def save(path: str | os.PathLike, header: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(header, tensors))


def load(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return loads(fh.read())

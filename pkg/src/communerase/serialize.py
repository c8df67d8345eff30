"""Versioned binary container shared by every saved artifact.

Layout: 4-byte magic, uint32 format version, then a sequence of sections.
Each section is a 4-byte tag, a uint64 payload length, and the payload.
Writing the same value twice produces identical bytes, so artifact hashes
are stable across runs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SerializationError, UnsupportedVersionError

MAGIC = b"CMGC"
VERSION = 1

_DTYPES = {b"f8": np.float64, b"i8": np.int64, b"u1": np.uint8}
_DTYPE_TAGS = {np.dtype(v): k for k, v in _DTYPES.items()}


def pack_array(arr: np.ndarray) -> bytes:
    """Encode an int64/float64/uint8 array with its shape."""
    arr = np.ascontiguousarray(arr)
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise SerializationError(f"unsupported array dtype {arr.dtype}")
    head = tag + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def unpack_array(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one array, returning it and the next offset."""
    tag = payload[offset : offset + 2]
    if tag not in _DTYPES:
        raise SerializationError(f"unknown array dtype tag {tag!r}")
    dtype = np.dtype(_DTYPES[tag])
    ndim = payload[offset + 2]
    shape_end = offset + 3 + 8 * ndim
    shape = struct.unpack(f"<{ndim}Q", payload[offset + 3 : shape_end])
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    end = shape_end + nbytes
    if end > len(payload):
        raise SerializationError("truncated array payload")
    arr = np.frombuffer(payload[shape_end:end], dtype=dtype).reshape(shape).copy()
    return arr, end


def pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def unpack_json(payload: bytes):
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerializationError(f"corrupt json section: {exc}") from exc


def write_container(path: str | Path, sections: list[tuple[bytes, bytes]]) -> None:
    """Write sections in the given order; tags are 4 bytes each."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    for tag, payload in sections:
        if len(tag) != 4:
            raise SerializationError(f"section tag must be 4 bytes, got {tag!r}")
        out += tag
        out += struct.pack("<Q", len(payload))
        out += payload
    Path(path).write_bytes(bytes(out))


def read_container(path: str | Path) -> dict[bytes, bytes]:
    """Read all sections; raises on bad magic, version, or truncation."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise SerializationError(f"{path}: not a recognized container (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version} is not supported (expected {VERSION})"
        )
    sections: dict[bytes, bytes] = {}
    pos = 8
    while pos < len(data):
        if pos + 12 > len(data):
            raise SerializationError(f"{path}: truncated section header")
        tag = data[pos : pos + 4]
        (length,) = struct.unpack("<Q", data[pos + 4 : pos + 12])
        pos += 12
        if pos + length > len(data):
            raise SerializationError(f"{path}: truncated section {tag!r}")
        sections[tag] = data[pos : pos + length]
        pos += length
    return sections


def require_section(sections: dict[bytes, bytes], tag: bytes, path) -> bytes:
    if tag not in sections:
        raise SerializationError(f"{path}: missing section {tag!r}")
    return sections[tag]

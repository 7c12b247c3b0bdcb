"""Versioned binary container shared by databases and model checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes
    version    uint16
    header_len uint32
    header     JSON, utf-8; lists the named arrays with dtype and shape
    payload    raw little-endian array bytes, sorted by array name
    digest     32 bytes, sha256 over everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

_PREFIX = struct.Struct("<8sHI")
_DIGEST_LEN = 32


class FormatError(Exception):
    """Base class for container read failures."""


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)


def dump(path: str | Path, magic: bytes, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    magic = magic.ljust(8, b"\0")
    entries = []
    blobs = []
    for name, arr in sorted(arrays.items()):  # canonical order: re-saving is byte-stable
        arr = _le(np.asarray(arr))
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    body = _PREFIX.pack(magic, version, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load(path: str | Path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    magic = magic.ljust(8, b"\0")
    if len(data) < _PREFIX.size:
        raise TruncatedFileError(f"{path}: file shorter than its fixed header")
    got_magic, got_version, header_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise VersionMismatchError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise VersionMismatchError(f"{path}: format version {got_version}, expected {version}")
    start = _PREFIX.size + header_len
    if len(data) < start:
        raise TruncatedFileError(f"{path}: header truncated")
    header = json.loads(data[_PREFIX.size:start])
    sizes = [
        np.dtype(e["dtype"]).itemsize * int(np.prod(e["shape"], dtype=np.int64))
        for e in header["arrays"]
    ]
    end = start + sum(sizes)
    if len(data) < end + _DIGEST_LEN:
        raise TruncatedFileError(f"{path}: payload truncated ({len(data)} < {end + _DIGEST_LEN} bytes)")
    if len(data) > end + _DIGEST_LEN:
        raise FormatError(f"{path}: {len(data) - end - _DIGEST_LEN} trailing bytes")
    if hashlib.sha256(data[:end]).digest() != data[end:]:
        raise ChecksumError(f"{path}: checksum mismatch")
    arrays = {}
    offset = start
    for e, size in zip(header["arrays"], sizes):
        dt = np.dtype(e["dtype"])
        arr = np.frombuffer(data, dtype=dt, count=size // dt.itemsize, offset=offset)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))
        offset += size
    return header["meta"], arrays

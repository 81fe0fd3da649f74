"""Checksummed binary container shared by dataset and model files.

Layout (little endian)::

    magic      8 bytes
    version    u16
    meta_len   u32
    metadata   meta_len bytes of UTF-8 JSON
    payload    format-specific
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

_HEAD = struct.Struct("<8sHI")


class FormatError(ValueError):
    """File is not a valid container (magic, version, truncation, checksum)."""


def write(path, magic: bytes, version: int, metadata: dict, payload: bytes):
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _HEAD.pack(magic, version, len(meta)) + meta + payload
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read(path, magic: bytes, version: int) -> tuple[dict, memoryview]:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + 4:
        raise FormatError(f"{path}: truncated header")
    got_magic, got_version, meta_len = _HEAD.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise FormatError(f"{path}: container version {got_version}, this build reads {version}")
    end = _HEAD.size + meta_len
    if len(data) < end + 4:
        raise FormatError(f"{path}: truncated metadata")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise FormatError(f"{path}: checksum mismatch (file corrupted or truncated)")
    try:
        meta = json.loads(data[_HEAD.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
    return meta, memoryview(data)[end:-4]

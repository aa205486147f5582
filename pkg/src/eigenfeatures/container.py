"""Framing shared by the binary file formats: magic, u16 version, CRC32 trailer."""

from __future__ import annotations

import os
import struct
import zlib

from .errors import CorruptPayloadError, VersionMismatchError


def frame(magic: bytes, version: int, body: bytes) -> bytes:
    head = magic + struct.pack("<H", version) + body
    return head + struct.pack("<I", zlib.crc32(head))


def unframe(blob: bytes, magic: bytes, version: int) -> bytes:
    """Validate framing and return the body between header and trailer."""
    if len(blob) < len(magic) + 2 + 4:
        raise CorruptPayloadError("file too short to hold header and checksum")
    if blob[:len(magic)] != magic:
        raise CorruptPayloadError(f"bad magic {blob[:len(magic)]!r}, expected {magic!r}")
    (found,) = struct.unpack_from("<H", blob, len(magic))
    if found != version:
        raise VersionMismatchError(f"{magic.decode()} version {found} is not supported (expected {version})")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise CorruptPayloadError("checksum mismatch: file is truncated or corrupted")
    return blob[len(magic) + 2:-4]


def pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def unpack_text(body: bytes, offset: int) -> tuple[str, int]:
    if offset + 4 > len(body):
        raise CorruptPayloadError("text field runs past end of payload")
    (n,) = struct.unpack_from("<I", body, offset)
    start = offset + 4
    if start + n > len(body):
        raise CorruptPayloadError("text field runs past end of payload")
    return body[start:start + n].decode("utf-8"), start + n


def write_atomic(path, data: bytes) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)

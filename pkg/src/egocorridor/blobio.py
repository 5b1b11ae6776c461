"""Binary container: magic, length-prefixed JSON header, float32 blobs, CRC32.

Layout::

    b"ECNW1"                     5-byte ASCII magic (format family + version digit)
    uint32 LE                    header length in bytes
    header                       UTF-8 JSON; lists blob shapes under "blobs"
    float32 LE * n               blob data, concatenated in header order
    uint32 LE                    zlib CRC32 of the blob section
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"ECNW1"
FORMAT_VERSION = 1

_LE_F32 = np.dtype("<f4")


def write_container(path, header: dict, blobs: list[np.ndarray]) -> None:
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["blobs"] = [list(b.shape) for b in blobs]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(b, dtype=_LE_F32).tobytes() for b in blobs)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_container(path) -> tuple[dict, list[np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise CorruptCheckpoint(f"{path}: file too short ({len(raw)} bytes)")
    magic = raw[: len(MAGIC)]
    if magic != MAGIC:
        if magic[:4] == MAGIC[:4]:
            raise VersionMismatch(f"{path}: format {magic!r}, reader supports {MAGIC!r}")
        raise CorruptCheckpoint(f"{path}: bad magic {magic!r}")
    pos = len(MAGIC)
    (head_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if pos + head_len + 4 > len(raw):
        raise CorruptCheckpoint(f"{path}: header length {head_len} exceeds file size")
    try:
        header = json.loads(raw[pos : pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    pos += head_len
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: header version {header.get('format_version')}")
    shapes = [tuple(s) for s in header.get("blobs", [])]
    n_bytes = sum(int(np.prod(s, dtype=np.int64)) for s in shapes) * 4
    if len(raw) != pos + n_bytes + 4:
        raise CorruptCheckpoint(
            f"{path}: expected {pos + n_bytes + 4} bytes, found {len(raw)} (truncated or padded)"
        )
    body = raw[pos : pos + n_bytes]
    (crc,) = struct.unpack_from("<I", raw, pos + n_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpoint(f"{path}: CRC mismatch in weight section")
    blobs, off = [], 0
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        blobs.append(np.frombuffer(body, dtype=_LE_F32, count=count, offset=off).astype(np.float32).reshape(shape))
        off += count * 4
    return header, blobs

"""Checksummed binary weight archive.

Layout (little endian, documented bit-exactly in docs/formats.md):

    magic   4 bytes  b"BIGN"
    version u16      currently 1
    count   u32      number of tensors
    entry*  u16 name length, utf-8 name, u8 ndim, u32 dims..., f32 values
    crc32   u32      zlib.crc32 of every byte after the magic

Entries are sorted by name, so save -> load -> save is byte-identical;
values persist as float32 while the in-memory pipeline computes in float64.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"BIGN"
VERSION = 1


class ArchiveError(ValueError):
    pass


def save_archive(tensors: dict[str, np.ndarray], path) -> None:
    names = sorted(tensors)
    if len(set(names)) != len(names):
        raise ArchiveError("duplicate tensor names")
    body = bytearray()
    body += struct.pack("<H", VERSION)
    body += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        array = np.asarray(tensors[name])
        body += struct.pack("<H", len(raw))
        body += raw
        body += struct.pack("<B", array.ndim)
        for dim in array.shape:
            body += struct.pack("<I", dim)
        body += array.astype("<f4").tobytes()  # C order, little endian
    checksum = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes(body))
        fh.write(struct.pack("<I", checksum))


def load_archive(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ArchiveError("bad magic: not a weight archive")
    body, (checksum,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != checksum:
        raise ArchiveError("checksum mismatch: archive corrupted")
    off = 0

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, body, off)
        off += size
        return values

    (version,) = take("<H")
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = take("<B")
        shape = tuple(take("<" + "I" * ndim)) if ndim else ()
        n_values = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(body, dtype="<f4", count=n_values, offset=off)
        off += 4 * n_values
        if name in out:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        out[name] = values.reshape(shape).astype(np.float64)
    if off != len(body):
        raise ArchiveError("trailing bytes after manifest")
    return out

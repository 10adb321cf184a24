"""FNV-1a 64-bit hashing, the single content-hash primitive used everywhere.

All ids, observation keys, noise values, and derived seeds flow through this
hash so that results are bit-identical across platforms and processes.
"""

from __future__ import annotations

import struct

MASK64 = (1 << 64) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    """Hash `data`, optionally continuing from a previous digest `h`."""
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def hash_parts(*parts: int | str | bytes) -> int:
    """Hash a heterogeneous tuple with an unambiguous canonical encoding.

    Integers are packed as 8-byte little-endian (masked to 64 bits), strings
    as UTF-8 with a 2-byte length prefix, bytes raw with a length prefix.
    """
    h = FNV_OFFSET
    for p in parts:
        if isinstance(p, int):
            h = fnv1a64(struct.pack("<Q", p & MASK64), h)
        elif isinstance(p, str):
            raw = p.encode("utf-8")
            h = fnv1a64(struct.pack("<H", len(raw)) + raw, h)
        else:
            h = fnv1a64(struct.pack("<I", len(p)) + p, h)
    return h

"""Stable seed derivation.

Python's ``hash`` is salted per process, so every derived stream goes through
blake2b instead.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1


def derive_key(seed: int, *keys: object) -> int:
    """Mix ``seed`` and any ints/strings into a 64-bit key."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", seed & MASK64))
    for k in keys:
        if isinstance(k, str):
            b = k.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(b)) + b)
        else:
            h.update(b"i" + struct.pack("<Q", int(k) & MASK64))
    return struct.unpack("<Q", h.digest())[0]


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_key(seed, *keys))

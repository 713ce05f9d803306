"""Deterministic random streams.

Every random decision in the library (weight init, dropout masks, shuffles,
augmentation parameters) draws from a Philox counter-based generator whose
128-bit key is derived by hashing a root seed together with a purpose tag.
Philox streams are platform-independent, so identical (seed, tags) produce
bit-identical randomness everywhere.
"""

import hashlib

import numpy as np

_SEP = b"\x1f"


def derive_key(seed, *tags) -> int:
    """Hash (seed, *tags) into a 128-bit Philox key."""
    msg = _SEP.join(str(part).encode("utf-8") for part in (seed, *tags))
    return int.from_bytes(hashlib.sha256(msg).digest()[:16], "little")


def stream(seed, *tags) -> np.random.Generator:
    """Independent generator for one purpose, e.g. stream(seed, "dropout", step)."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *tags)))

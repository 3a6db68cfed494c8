"""Deterministic RNG stream derivation.

Every source of randomness in the library is a named stream derived from an
integer base seed plus a key path (strings and ints). Derivation goes through
sha256 so it is stable across platforms and Python processes, unlike the
built-in ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*keys: int | str) -> int:
    """Map a key path to a stable 64-bit seed."""
    h = hashlib.sha256()
    for key in keys:
        if isinstance(key, bool) or not isinstance(key, (int, str)):
            raise TypeError(f"seed keys must be int or str, got {type(key).__name__}")
        tag = b"i" if isinstance(key, int) else b"s"
        h.update(tag + str(key).encode("utf-8") + b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(*keys: int | str) -> np.random.Generator:
    """Independent generator for the given key path."""
    return np.random.default_rng(derive_seed(*keys))

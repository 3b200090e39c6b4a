"""Deterministic seed derivation and per-pixel hash noise.

The boundary-noise model of the mock promptable backend must be bit-exact
reproducible by out-of-process backends, so the per-pixel coin flips are
defined by an explicit counter-based hash (splitmix64) instead of a stateful
RNG. Any backend that implements `pixel_uniform` identically produces
identical masks.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; x is uint64, arithmetic wraps mod 2^64
    with np.errstate(over="ignore"):
        z = (x + _GOLDEN) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK64
        return z ^ (z >> np.uint64(31))


def pixel_uniform(seed: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Uniform [0,1) value per (row, col), determined solely by (seed, row, col).

    Defined as splitmix64(splitmix64(seed) XOR (row << 32 | col)) / 2^64.
    """
    s = np.uint64(seed % (1 << 64))
    base = _splitmix64(np.asarray([s], dtype=np.uint64))[0]
    key = (rows.astype(np.uint64) << np.uint64(32)) | cols.astype(np.uint64)
    h = _splitmix64(base ^ key)
    return h.astype(np.float64) / float(1 << 64)


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary labeled parts (order-sensitive).

    Uses SHA-256 of the unit-separated string rendering, so results do not
    depend on PYTHONHASHSEED, platform, or process scheduling.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1

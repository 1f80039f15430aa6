"""Splittable deterministic seeding.

Every stochastic draw in the package is keyed by a 64-bit seed derived from
(global seed, structural coordinates) through `mix64`, so any view, shuffle,
or init can be regenerated in isolation and in parallel with results
identical to a sequential run. No shared mutable RNG state exists anywhere.

The mixing function is splitmix64 folded over the parts; string parts are
first reduced to 64 bits with blake2b (stable across processes, unlike
Python's salted `hash`).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scrambling step (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _as_u64(part: int | str | bytes) -> int:
    if isinstance(part, str):
        part = part.encode("utf-8")
    if isinstance(part, bytes):
        return int.from_bytes(
            hashlib.blake2b(part, digest_size=8).digest(), "little"
        )
    return int(part) & _MASK64


def mix64(*parts: int | str | bytes) -> int:
    """Combine parts into one 64-bit seed.

    Order-sensitive: mix64(a, b) != mix64(b, a) in general.
    """
    acc = 0x6A09E667F3BCC909
    for part in parts:
        acc = splitmix64(acc ^ _as_u64(part))
    return acc


def rng_from(*parts: int | str | bytes) -> np.random.Generator:
    """Fresh PCG64 generator keyed by the mixed parts."""
    return np.random.default_rng(mix64(*parts))

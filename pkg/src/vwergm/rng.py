"""Counter-free 64-bit generator used by every stochastic routine.

Generator: xoshiro256** (Blackman & Vigna), state seeded from a 64-bit seed by
four successive SplitMix64 outputs.  Per-replica streams are derived with
:func:`derive_seed`.  Uniform reals take the top 53 bits of an output; vertex
indices use threshold rejection so every index is exactly equally likely.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for input ``x`` (pure Python, exact 64-bit)."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Seed of the stream keyed by ``indices`` under ``master``."""
    h = splitmix64(int(master) & MASK64)
    for i in indices:
        h = splitmix64(h ^ (int(i) & MASK64))
    return h


def seed_state(seed: int) -> np.ndarray:
    """xoshiro256** state (4 x uint64) for a 64-bit seed."""
    out = np.empty(4, dtype=np.uint64)
    x = int(seed) & MASK64
    for j in range(4):
        x = (x + _GOLDEN) & MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out[j] = z ^ (z >> 31)
    if not out.any():  # all-zero state is a fixed point of the generator
        out[0] = 1
    return out


def seed_states(seeds) -> np.ndarray:
    return np.stack([seed_state(s) for s in seeds]) if len(seeds) else np.empty((0, 4), np.uint64)


@njit(inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(inline="always")
def next_double(s):
    return np.float64(next_u64(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def rejection_threshold(n):
    nn = np.uint64(n)
    return (np.uint64(0) - nn) % nn


@njit(inline="always")
def next_below(s, n, threshold):
    """Uniform integer in ``[0, n)``; ``threshold`` from :func:`rejection_threshold`."""
    nn = np.uint64(n)
    while True:
        r = next_u64(s)
        if r >= threshold:
            return np.int64(r % nn)


@njit(cache=True)
def draw_u64(s, count):
    out = np.empty(count, dtype=np.uint64)
    for j in range(count):
        out[j] = next_u64(s)
    return out


@njit(cache=True)
def draw_doubles(s, count):
    out = np.empty(count)
    for j in range(count):
        out[j] = next_double(s)
    return out


@njit(cache=True)
def draw_below(s, n, count):
    thr = rejection_threshold(n)
    out = np.empty(count, dtype=np.int64)
    for j in range(count):
        out[j] = next_below(s, n, thr)
    return out

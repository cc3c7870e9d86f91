"""Portable counter-based SplitMix64 streams.

Output ``i`` (0-based) of the stream with seed ``s`` is ``mix(s + (i + 1) * G)``
modulo 2**64, with ``G = 0x9E3779B97F4A7C15`` and::

    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)

which is the standard SplitMix64 sequence. Child streams are keyed by an
integer: ``substream(s, k) = mix(s ^ mix((k + 1) * G))``. Uniform doubles
use the top 53 bits; normals use one Box-Muller cosine branch per pair of
consecutive outputs. Everything here is a pure function of (seed, key,
position), so results never depend on evaluation order.
"""

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix_int(z: int) -> int:
    """Scalar SplitMix64 finalizer on Python ints."""
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def substream(seed: int, *keys: int) -> int:
    """Seed of the child stream reached by following ``keys`` from ``seed``."""
    s = int(seed) & MASK
    for k in keys:
        s = mix_int(s ^ mix_int((int(k) + 1) * GAMMA))
    return s


def u64(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Outputs ``offset .. offset + n - 1`` of the stream as uint64."""
    counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    base = np.uint64(int(seed) & MASK)
    return _mix(base + counters * np.uint64(GAMMA))


def uniform(seed: int, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    u = (u64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return low + (high - low) * u


def normal(seed: int, n: int) -> np.ndarray:
    raw = u64(seed, 2 * n) >> np.uint64(11)
    u1 = (raw[0::2].astype(np.float64) + 1.0) * 2.0 ** -53  # (0, 1]
    u2 = raw[1::2].astype(np.float64) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def permutation(seed: int, n: int) -> np.ndarray:
    """Indices ``0..n-1`` ordered by their stream outputs (stable on equal keys)."""
    return np.argsort(u64(seed, n), kind="stable")

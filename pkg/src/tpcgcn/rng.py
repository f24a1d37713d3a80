"""Deterministic, platform-independent random streams.

The generator is counter-based splitmix64: output ``i`` of a stream seeded
with ``s`` is ``mix64(s + (i+1) * GAMMA)`` where ``mix64`` is the standard
splitmix64 finalizer and GAMMA is the golden-ratio increment. Identical
seeds therefore give identical streams on every platform, the stream depends
only on how many values have been drawn (not on how the draws were batched),
and batches vectorize over numpy uint64 arithmetic.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_DOUBLE_SCALE = 1.0 / (1 << 53)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used for stable token and stream-key hashing."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class SeededRng:
    """Counter-based splitmix64 stream of uniform doubles in [0, 1)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._count = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix64(_U64(self.seed) + idx * _GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """Next ``n`` doubles in [0, 1), as a 1-D float64 array."""
        return (self._raw(n) >> _U64(11)).astype(np.float64) * _DOUBLE_SCALE

    def uniform_in(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.uniform(n)

    def normal(self, n: int) -> np.ndarray:
        """Box-Muller pairs; draws 2*ceil(n/2) uniforms."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        out = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        order = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            order[i], order[j] = order[j], order[i]
        return order

    def shuffled(self, items: list) -> list:
        return [items[i] for i in self.permutation(len(items))]

    def spawn(self, key: str) -> "SeededRng":
        """Independent child stream derived from this stream's seed and a key.

        Spawning does not consume from the parent stream, so substreams can
        be created in any order.
        """
        with np.errstate(over="ignore"):
            mixed = _mix64(
                np.uint64((self.seed ^ fnv1a64(key.encode("utf-8"))) & _MASK64)
            )
        return SeededRng(int(mixed))

"""Portable xoshiro256++ generator seeded through SplitMix64.

Every random decision in the pipeline (anchor draws, patch draws, fold
assignment, batch order) goes through :class:`Rng` so that a u64 seed
reproduces a run bit for bit on any platform. Bulk arrays (phantom noise,
weight init) are produced by a numpy ``Generator`` whose seed is drawn from
this stream.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def mix_seed(seed: int, *stream: int) -> int:
    """Derive a child seed from ``seed`` and stream ids (subject, fold, ...)."""
    state = seed & _MASK64
    for s in stream:
        state, out = splitmix64(state ^ (s & _MASK64))
        state = out
    _, out = splitmix64(state)
    return out


class Rng:
    """xoshiro256++ with a 256-bit state filled from SplitMix64(seed)."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[0] + s[3]) & _MASK64, 23) + s[0]) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top bits."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        while True:
            v = self.next_u64() >> (64 - bits)
            if v < n:
                return v

    def integers(self, low: int, high: int) -> int:
        """Integer uniform on the inclusive range [low, high]."""
        return low + self.randbelow(high - low + 1)

    def normal(self) -> float:
        # Box-Muller, one value per call; keeps the stream position simple
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def numpy(self) -> np.random.Generator:
        """A numpy Generator seeded from the next value of this stream."""
        return np.random.Generator(np.random.PCG64(self.next_u64()))

    def spawn(self, *stream: int) -> "Rng":
        return Rng(mix_seed(self.seed, *stream))

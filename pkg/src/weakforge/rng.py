"""Portable pseudo-random streams.

Seeds are derived with splitmix64 from a run seed plus a path of stream
labels; draws come from xoshiro256**. Everything is integer arithmetic on
Python ints masked to 64 bits, so sequences are identical on every platform
and independent of numpy's generator versions.
"""

from __future__ import annotations

import math
from typing import MutableSequence, Sequence, TypeVar

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

T = TypeVar("T")


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once. Returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    return state, _mix64(state)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, *labels: object) -> int:
    """Fold a path of labels into ``seed``.

    Each label is hashed (FNV-1a over ``str(label)`` in UTF-8), xored into the
    running value and passed through one splitmix64 step. The empty path maps
    ``seed`` through a single step as well, so ``derive_seed(s)`` differs from
    ``s``.
    """
    s = seed & MASK64
    _, s = splitmix64(s)
    for label in labels:
        _, s = splitmix64(s ^ fnv1a64(str(label).encode("utf-8")))
    return s


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator seeded through splitmix64."""

    __slots__ = ("s",)

    def __init__(self, seed: int = 0, state: Sequence[int] | None = None):
        if state is not None:
            if len(state) != 4 or not any(state):
                raise ValueError("xoshiro256 state must be four words, not all zero")
            self.s = [int(w) & MASK64 for w in state]
            return
        sm = seed & MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s = words

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
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

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by bitmask rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        mask = (1 << (n - 1).bit_length()) - 1
        while True:
            x = self.next_u64() & mask
            if x < n:
                return x

    def integers(self, lo: int, hi: int) -> int:
        """Integer in the closed range [lo, hi]."""
        return lo + self.below(hi - lo + 1)

    def choice(self, items: Sequence[T]) -> T:
        return items[self.below(len(items))]

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def normal(self) -> float:
        # Box-Muller, one variate per call (the sine branch is discarded)
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)


def rng(seed: int, *labels: object) -> Xoshiro256:
    """Generator for the labelled stream ``labels`` under ``seed``."""
    return Xoshiro256(derive_seed(seed, *labels))

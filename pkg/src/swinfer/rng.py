"""Deterministic pseudo-randomness for every stochastic pipeline stage.

One 64-bit counter-based generator (SplitMix64) is the root of all
randomness in the project. A master seed plus a stage tag ("data",
"init", "batch", ...) derives an independent sub-seed, so each stage is
reproducible on its own and runs are bitwise repeatable for a fixed
(seed, inputs) pair.

SplitMix64 reference sequence: output(i) = mix(seed + (i+1) * GOLDEN)
with GOLDEN = 0x9E3779B97F4A7C15 and the standard xor-shift/multiply
finalizer. Floats are the top 53 bits scaled to [0, 1).
"""

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, tag: str) -> int:
    """Derive a stage-specific 64-bit sub-seed from the master seed.

    The tag is folded in with FNV-1a so that distinct stage names give
    unrelated streams even for adjacent master seeds.
    """
    h = 0xCBF29CE484222325
    for b in tag.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return _mix((master & _MASK) ^ h)


class SplitMix64:
    """Counter-based 64-bit generator; cheap, splittable, reproducible."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK
        self._counter = 0

    def next_u64(self) -> int:
        self._counter += 1
        return _mix((self._seed + self._counter * _GOLDEN) & _MASK)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("randrange needs n > 0")
        limit = (_MASK + 1) - (_MASK + 1) % n
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn from range(n), order randomized."""
        idx = list(range(n))
        self.shuffle(idx)
        return idx[:k]

    def numpy_rng(self) -> np.random.Generator:
        """A numpy Generator seeded from this stream (weight init etc.)."""
        return np.random.Generator(np.random.PCG64(self.next_u64()))

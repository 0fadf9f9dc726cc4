"""Portable, seedable random number generation.

Every random draw in this project (synthetic data, parameter
initialization, shuffling, splitting) flows through :class:`Rng` so that a
seed fully determines the result, on any platform and in any
reimplementation.  The algorithm is pinned:

* State advance: SplitMix64 (Steele, Lea, Flood 2014).  ``state`` advances
  by the 64-bit golden-ratio constant ``0x9E3779B97F4A7C15``; each output
  is the finalizer ``mix64`` applied to the new state.
* Uniforms: the top 53 bits of a 64-bit output, scaled by ``2**-53``,
  giving a double in ``[0, 1)``.
* Normals: Box-Muller on two uniforms, with ``u1`` shifted into ``(0, 1]``
  to avoid ``log(0)``.  Both values of each pair are consumed in order
  (cosine first).
* Integers: ``floor(uniform() * n)``.  The modulo-free scaling keeps the
  bias below 2**-53, which is irrelevant at the ranges used here.
* Stream derivation: :func:`derive` hashes a parent seed with integer tags
  so that independent streams (per sample, per class, per epoch) never
  overlap by construction.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit avalanche mix."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive(seed: int, *tags: int) -> int:
    """Derive a child seed from ``seed`` and a sequence of integer tags.

    Each tag is folded in with one mix round, so ``derive(s, a, b)`` and
    ``derive(s, b, a)`` give unrelated streams.
    """
    s = mix64(seed)
    for t in tags:
        s = mix64((s ^ (t & _MASK)) + _GOLDEN)
    return s


class Rng:
    """SplitMix64 stream with uniform/normal/integer draws (see module doc)."""

    def __init__(self, seed: int):
        self._state = seed & _MASK
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return mix64(self._state)

    def uniform(self) -> float:
        """Double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        return int(self.uniform() * n)

    def normal(self) -> float:
        """Standard normal via Box-Muller; pairs are consumed in order."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # shift u1 into (0, 1] so log() is finite
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]

    def uniforms(self, n: int) -> list[float]:
        return [self.uniform() for _ in range(n)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, high index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

"""Splittable counter-based random streams.

One run seeds any number of independent streams keyed by (purpose, index);
draw order within a stream is the only thing that matters, so event
interleaving across entities can never perturb another entity's samples.
SplitMix64 is the mixer: integer-exact and dependency-free.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix(*parts: int) -> int:
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = _splitmix64(h ^ (p & _MASK))
    return h


class Stream:
    """A deterministic u64 sequence with the sampling helpers the sim needs."""

    def __init__(self, seed: int, purpose: str, index: int = 0):
        tag = _mix(*(ord(c) for c in purpose))
        self._state = _mix(seed, tag, index)

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        return _splitmix64(self._state)

    def uniform(self) -> float:
        """Uniform in (0, 1]; never returns 0 so log() is always finite."""
        return (self.next_u64() + 1) * (2.0 ** -64)

    def bernoulli(self, p: float) -> bool:
        return self.uniform() <= p

    def exponential_us(self, mean_us: int) -> int:
        """Exponential duration rounded to whole microseconds, at least 1."""
        return max(1, round(-mean_us * math.log(self.uniform())))

    def uniform_us(self, lo_us: int, hi_us: int) -> int:
        if hi_us <= lo_us:
            return lo_us
        return lo_us + self.next_u64() % (hi_us - lo_us + 1)

    def choice(self, items: list):
        if not items:
            raise ValueError("choice on empty list")
        return items[self.next_u64() % len(items)]

"""SplitMix64: a 64-bit-state generator simple enough to reproduce in any language.

Uniform doubles take the top 53 bits of each output: ``(x >> 11) * 2**-53``.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the top bits."""
        if n <= 0:
            raise ValueError("n must be positive")
        bits = n.bit_length()
        while True:
            v = self.next_u64() >> (64 - bits)
            if v < n:
                return v

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, mu: float, sigma: float) -> float:
        # Box-Muller, one draw per pair of uniforms (no cached second value).
        u1 = 1.0 - self.random()
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def exponential(self, scale: float) -> float:
        return -scale * math.log(1.0 - self.random())

    def binomial(self, trials: int, p: float) -> int:
        return sum(1 for _ in range(trials) if self.random() < p)

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), via a partial Fisher-Yates shuffle."""
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

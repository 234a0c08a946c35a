"""Small, fully specified PRNG so point sampling is reproducible anywhere.

``Xorshift128Plus`` is seeded by two successive outputs of SplitMix64:

    splitmix64(state):
        state += 0x9E3779B97F4A7C15
        z = state
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    xorshift128+ step (s0, s1 are 64-bit):
        a, b = s0, s1
        out  = a + b
        a ^= a << 23
        s0, s1 = b, a ^ b ^ (a >> 17) ^ (b >> 26)
        return out

All arithmetic is modulo 2**64. ``shuffle`` is a descending Fisher-Yates
pass drawing ``j = next() % (i + 1)``.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xorshift128Plus:
    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self.s0 = sm.next()
        self.s1 = sm.next()
        if self.s0 == 0 and self.s1 == 0:  # all-zero state never leaves zero
            self.s1 = 1

    def next(self) -> int:
        a, b = self.s0, self.s1
        out = (a + b) & MASK64
        a = (a ^ (a << 23)) & MASK64
        self.s0 = b
        self.s1 = a ^ b ^ (a >> 17) ^ (b >> 26)
        return out

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates shuffle; returns ``items`` for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next() % (i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n: int) -> list[int]:
        return self.shuffle(list(range(n)))

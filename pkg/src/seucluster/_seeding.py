"""Portable 64-bit seed derivation and a tiny deterministic random stream.

Everything random in the package goes through here so that results are
reproducible across platforms and numpy versions.
"""

import hashlib

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 finalization step."""
    x = (x + GOLDEN_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _key(k) -> int:
    if isinstance(k, str):
        return int.from_bytes(hashlib.blake2b(k.encode(), digest_size=8).digest(), "little")
    return int(k) & MASK64


def derive_seed(seed: int, *keys) -> int:
    """Child seed for ``keys`` (ints or strings) under ``seed``.

    ``derive_seed(s, t, j)`` is the per-injection stream used by campaigns, so
    any job can be regenerated without replaying the ones before it.
    """
    h = splitmix64(int(seed) & MASK64)
    for k in keys:
        h = splitmix64(h ^ _key(k))
    return h


class SplitMix64:
    """Sequential generator; state advances by the golden gamma per draw."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

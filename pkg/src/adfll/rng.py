"""PCG32 pseudo-random generator.

Every source of randomness in the system is an explicit, seedable Pcg32
instance; nothing reads global RNG state. Streams for the different
components of an experiment are derived from a single master seed via
`derive_rng`, so a run is fully reproducible from one integer.
"""

from __future__ import annotations

from .hashing import MASK64, hash_parts

_MULT = 6364136223846793005


class Pcg32:
    """Melissa O'Neill's PCG-XSH-RR 64/32 generator (64-bit state + stream)."""

    __slots__ = ("state", "inc")

    def __init__(self, seed: int, stream: int = 0):
        self.state = 0
        self.inc = (((stream & MASK64) << 1) | 1) & MASK64
        self._step()
        self.state = (self.state + (seed & MASK64)) & MASK64
        self._step()

    def _step(self) -> None:
        self.state = (self.state * _MULT + self.inc) & MASK64

    def next_u32(self) -> int:
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = (1 << 32) - ((1 << 32) % n)
        while True:
            r = self.next_u32()
            if r < limit:
                return r % n

    def uniform(self) -> float:
        """Uniform float in [0, 1)."""
        return self.next_u32() / 4294967296.0

    def chance(self, p: float) -> bool:
        """True with probability p."""
        return self.uniform() < p

    def choice(self, seq):
        return seq[self.below(len(seq))]


def derive_rng(master_seed: int, *labels: int | str) -> Pcg32:
    """Deterministic child generator for a labeled component of a run."""
    state = hash_parts(master_seed, "state", *labels)
    stream = hash_parts(master_seed, "stream", *labels)
    return Pcg32(state, stream)

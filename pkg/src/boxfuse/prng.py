"""SplitMix64 stream used for parameter initialization.

The generator is counter-based: draw ``n`` (0-based) is ``mix(seed + (n+1) * GAMMA)``,
so a whole block of draws can be produced with one vectorized call and the
sequence is identical to stepping the classic SplitMix64 state one at a time.
Uniforms take the top 53 bits: ``u = (z >> 11) * 2**-53`` in [0, 1).
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_block(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` float64 draws in [0, 1)."""
        return (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)

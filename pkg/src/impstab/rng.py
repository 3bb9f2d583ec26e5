"""SplitMix64 generator for reproducible randomized probes.

The stream is fully specified (Steele, Lea and Flood's constants), so probe
inputs are identical across platforms and numpy versions.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SplitMix64"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


class SplitMix64:
    """Counter-based SplitMix64 stream; ``state`` advances by the golden gamma per draw."""

    def __init__(self, seed: int = 42):
        self.state = int(seed) & _MASK

    def next_uint64(self, size: int) -> np.ndarray:
        k = np.arange(1, size + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + size * int(_GAMMA)) & _MASK
        return z

    def random(self, size: int) -> np.ndarray:
        """Uniform doubles in [0, 1) from the top 53 bits."""
        return (self.next_uint64(size) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform(self, size: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        return low + (high - low) * self.random(size)

"""Seeded random streams.

Uniform draws come from numpy's PCG64 bit generator (PCG-XSL-RR 128/64,
state advanced by ``state = state * mult + inc`` mod 2**128), whose output for
a given seed is fixed across platforms. Gaussian draws use the Box-Muller
transform on pairs of uniforms so the normal stream is defined by this module
rather than by numpy's ziggurat.
"""
from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    def spawn(self, i: int) -> "Rng":
        """Independent stream for worker/member ``i``: seed XOR i."""
        return Rng(self.seed ^ int(i))

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller.

        Draws come in pairs (cos branch first, then sin branch) and a trailing
        odd draw discards its partner.
        """
        scalar = size is None
        shape = () if scalar else (tuple(size) if np.iterable(size) else (int(size),))
        n = math.prod(shape)
        k = (n + 1) // 2
        u1 = 1.0 - self._gen.random(k)  # (0, 1]
        u2 = self._gen.random(k)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * k)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        out = z[:n].reshape(shape)
        return float(out) if scalar else out

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

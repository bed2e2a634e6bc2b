"""Seeded random streams.

Every stochastic routine in the toolkit draws from an :class:`RngStream`.
Uniforms come from numpy's PCG64 generator; standard normals are produced
from those uniforms with the Box-Muller transform so the normal sequence is
a fixed function of the uniform sequence.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *key: int) -> "RngStream":
        """Independent child stream identified by ``key`` (e.g. a label index)."""
        return RngStream(self.seed, self.key + tuple(key))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self._gen.random((2, m))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u lies in (0, 1]
        ang = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def gamma(self, shape, scale) -> np.ndarray:
        return self._gen.gamma(shape, scale)

    def poisson(self, lam) -> np.ndarray:
        return self._gen.poisson(lam)

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self._gen.random(p.shape) < p

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, replace=True, p=None):
        return self._gen.choice(n, size=size, replace=replace, p=p)


def rng_stream(seed: int) -> RngStream:
    return RngStream(seed)

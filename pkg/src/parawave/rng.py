"""Seeded noise sources.

Uniforms come from numpy's counter-based Philox bit generator; normals are
made from them with the Box-Muller transform so every draw is reproducible
from ``(seed, stream)`` alone.
"""
from __future__ import annotations

import numpy as np


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF]))


def standard_normal(seed: int, shape, stream: int = 0) -> np.ndarray:
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape))
    gen = philox(seed, stream)
    m = (n + 1) // 2
    u1 = 1.0 - gen.random(m)  # (0, 1]
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)


def uniform(seed: int, shape, low: float = 0.0, high: float = 1.0, stream: int = 0) -> np.ndarray:
    return philox(seed, stream).uniform(low, high, shape)

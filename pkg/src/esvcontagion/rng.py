"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *key)`` through
``SeedSequence.spawn_key``, so any (stage, grid point, time step) stream can
be rebuilt directly without replaying earlier draws.
"""

from __future__ import annotations

import zlib

import numpy as np

# substream tags
FILTER = 1
SIMULATE = 2
PIPELINE = 3


def tag(name: str) -> int:
    """Stable integer tag for a named substream."""
    return zlib.crc32(name.encode())


def stream(seed: int, *key: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is required")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def half_t(rng: np.random.Generator, nu: float, size) -> np.ndarray:
    """Draws of |T| for T ~ Student-t(nu); ``nu = inf`` gives ones."""
    if np.isinf(nu):
        return np.ones(size)
    num = np.abs(rng.standard_normal(size))
    return num / np.sqrt(rng.chisquare(nu, size) / nu)


def derive_seed(seed: int, *names: str) -> int:
    """A 32-bit seed for a named substream, e.g. ``derive_seed(7, "stage1", "US")``."""
    if seed is None:
        raise ValueError("a seed is required")
    key = (PIPELINE, *(tag(n) for n in names))
    return int(np.random.SeedSequence(int(seed), spawn_key=key).generate_state(1)[0])

"""
Seeded random streams.

Every stochastic step (initialization, shuffling, splits, synthesis) draws from a
numpy Generator over the PCG64 bit generator, whose output for a given seed is fixed
across platforms and numpy releases. Sub-streams are derived with SeedSequence so that
independent consumers never share state.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "PCG64"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for `seed`, optionally narrowed to an independent sub-stream by `keys`."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=keys)))


"""Deterministic random substreams.

Every random draw in the package comes from a Philox counter-based generator
keyed by ``(seed, *keys)``.  Keys are small non-negative integers such as a
replicate index, a step index and a purpose tag, so any substream can be
rebuilt in isolation without replaying the ones before it.
"""

from __future__ import annotations

import numpy as np

# Purpose tags, used as the last key of a substream.
ESTIMATOR = 0
FLIPS = 1
INIT = 2
SHUFFLE = 3
PROBLEM = 4
POINTS = 5

_U64 = (1 << 64) - 1


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``."""
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if any(k < 0 for k in keys):
        raise ValueError(f"substream keys must be non-negative, got {keys}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))

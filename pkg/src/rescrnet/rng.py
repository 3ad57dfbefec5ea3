"""Keyed random streams.

Every consumer draws from a generator derived from ``(seed, purpose, *keys)``
so results do not depend on the order in which samples are processed.
"""

from __future__ import annotations

import numpy as np

AUGMENT = 1
DROPOUT = 2
SPLIT = 3
SYNTH = 4


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), purpose, *map(int, keys)])))

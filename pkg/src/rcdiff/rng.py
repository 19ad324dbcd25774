"""Seed handling. Every random stream is derived from an integer seed plus a
tuple of integer keys so that parallel work never shares a stream."""
from __future__ import annotations

import numpy as np


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; distinct keys never collide."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


# Stage tags used when deriving pipeline substreams.
STAGE_WORLD = 0
STAGE_LABELED = 1
STAGE_UNLABELED = 2
STAGE_PSEUDO = 3
STAGE_TRAIN = 4
STAGE_GENERATE = 5
STAGE_TARGET = 6

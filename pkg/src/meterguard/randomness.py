"""Deterministic RNG substreams.

Every randomized stage derives its generator from a user seed plus a
fixed integer path, so the stages cannot disturb each other: adding a
tree never changes what the synthesizer draws, fold shuffling never
changes tree bootstraps, and any single stream can be reconstructed in
isolation. Domain tags keep the paths of different stages disjoint.
"""

from __future__ import annotations

import numpy as np

DOMAIN_SYNTH = 1
DOMAIN_TREE = 2
DOMAIN_FOLDS = 3
DOMAIN_SPLIT = 4


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream of `seed` identified by `path`."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.PCG64(ss))

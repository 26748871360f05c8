"""Named, reproducible random substreams.

Every stochastic component (corpus synthesis, splitting, parameter init,
dropout, skip-gram sampling) draws from its own substream derived from a
single user seed plus a stream name, so any component can be reproduced
in isolation and whole pipelines are bit-reproducible.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator keyed by (seed, name), stable across runs and platforms."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))

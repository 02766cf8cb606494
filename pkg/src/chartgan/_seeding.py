"""Splittable seeding.

Every random quantity in the package is drawn from a generator keyed by
``(seed, *keys)`` through :class:`numpy.random.SeedSequence` spawn keys, so
a draw never depends on the order in which other draws were made.
"""

import numpy as np


def derive_seed(seed, *keys):
    """Return a 63-bit integer seed for the child stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed, *keys):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)

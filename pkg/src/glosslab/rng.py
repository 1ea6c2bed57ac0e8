"""Seeded, splittable random streams.

All stochastic code in the package draws from a counter-based Philox
generator. Streams are derived from a root seed plus an integer path, so
any component can get an independent, reproducible stream without
coordinating with the rest of the program.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator for (seed, path).

    The same (seed, path) always yields the same stream; distinct paths
    yield statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))

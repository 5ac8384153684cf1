"""Deterministic stream splitting on a counter-based generator.

Every random draw in a run comes from ``Philox`` seeded by a ``SeedSequence``
whose spawn key is a path below the master seed::

    master -> (domain, cycle, point, length_index)

One stream serves one sequence: it draws the gate indices first, then the
shot counts of the four variants in order. A stream depends only on its path,
so serial and parallel execution draw identical numbers.
"""

from __future__ import annotations

import numpy as np

SCENARIO = 0
SEQUENCES = 1
T1_SCAN = 2
BOOTSTRAP = 3


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))

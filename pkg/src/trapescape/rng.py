"""Counter-based random streams.

Every replica gets its own Philox stream keyed by (master seed, replica
index), so results never depend on how replicas are scheduled.
"""

from __future__ import annotations

import numpy as np


def stream(master: int, *index: int) -> np.random.Generator:
    """Independent generator for `index` under `master` (Philox4x64)."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, tuple):
        return stream(*seed)
    return stream(0 if seed is None else int(seed))

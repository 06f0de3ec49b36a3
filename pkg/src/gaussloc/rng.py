"""Counter-based random streams.

Every stream is a Philox generator whose key is derived from
``(seed, replica_id, stream)``, so draws never depend on scheduling or on
how many other streams were consumed first.
"""

from __future__ import annotations

import numpy as np

ENVIRONMENT = 0
OU_NOISE = 1
SAMPLER = 2
PERTURBATION = 3
CENTERS = 4
TRIALS = 5
ATOM_ENV = 6

_MASK64 = (1 << 64) - 1


def stream(seed: int, replica_id: int = 0, stream: int = ENVIRONMENT) -> np.random.Generator:
    if not 0 <= stream < (1 << 16):
        raise ValueError("stream tag must fit in 16 bits")
    if replica_id < 0:
        raise ValueError("replica_id must be non-negative")
    word1 = ((int(replica_id) << 16) | int(stream)) & _MASK64
    key = np.array([int(seed) & _MASK64, word1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

"""Counter-derived random streams.

A stream is identified by ``(master_seed, *counter)``; the same key always
yields the same Generator, independent of how work is scheduled.
"""

import numpy as np


def stream(seed: int, *counter: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in counter))
    return np.random.Generator(np.random.PCG64(ss))

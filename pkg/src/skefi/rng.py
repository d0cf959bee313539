"""Seeded random streams.

All randomness in the package flows from a single integer seed through
named sub-streams, so that e.g. weight initialization and data shuffling
can be varied independently while staying reproducible.
"""

import numpy as np

# Stable name -> index table; appending new names keeps old streams intact.
_STREAMS = {
    "init": 0,
    "shuffle": 1,
    "augment": 2,
    "synth": 3,
    "test": 4,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named random stream for a run seed."""
    if name not in _STREAMS:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[name],))
    return np.random.Generator(np.random.PCG64(ss))


def per_sample(seed: int, name: str, index: int) -> np.random.Generator:
    """A stream for one sample, independent of processing order."""
    if name not in _STREAMS:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(_STREAMS)}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[name], index))
    return np.random.Generator(np.random.PCG64(ss))

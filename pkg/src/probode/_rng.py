import numpy as np


def substream(seed, *keys):
    """Independent generator identified by ``(seed, *keys)``.

    Streams for distinct key tuples are statistically independent, and the same
    tuple always yields the same stream.
    """
    spawn_key = tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))

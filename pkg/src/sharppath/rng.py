"""Seeded random streams, split by purpose.

Every consumer of randomness draws from its own stream derived from the
master seed and a purpose tag, so e.g. running a spectrum estimate never
shifts the shuffling order of the training loop.
"""
import numpy as np

PURPOSES = {
    "init": 0,
    "shuffle": 1,
    "probe": 2,
    "lanczos": 3,
    "subsample": 4,
    "augment": 5,
    "data": 6,
}


class SeededRng:
    """Factory of independent ``numpy.random.Generator`` streams.

    Streams are keyed by ``(seed, purpose, *keys)`` through
    ``numpy.random.SeedSequence``; identical keys always give identical
    streams regardless of call order.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def stream(self, purpose, *keys):
        if purpose not in PURPOSES:
            raise KeyError(f"unknown rng purpose {purpose!r}")
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, PURPOSES[purpose], *[int(k) for k in keys]]
        return np.random.Generator(np.random.PCG64DXSM(np.random.SeedSequence(entropy)))

    def __repr__(self):
        return f"SeededRng({self.seed})"


def make_rng(seed, purpose, *keys):
    return SeededRng(seed).stream(purpose, *keys)

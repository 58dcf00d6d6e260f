"""Seeded random streams.

Every stream is numpy's PCG64 bit generator seeded through a SeedSequence whose
spawn key is the CRC-32 of each string label. Both algorithms are fixed by
numpy's compatibility policy, so a (seed, labels) pair names the same stream on
every platform.
"""

import zlib

import numpy as np


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


class Rng:
    def __init__(self, seed, *labels):
        self.seed = int(seed)
        self.labels = tuple(labels)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_label_key(x) for x in labels))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *labels):
        """Independent stream keyed by ``labels`` below this one."""
        return Rng(self.seed, *self.labels, *labels)

    def derive_seed(self, *labels):
        ss = np.random.SeedSequence(
            self.seed, spawn_key=tuple(_label_key(x) for x in (*self.labels, *labels))
        )
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self.gen.normal(loc, scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self.gen.permutation(x)

    def random(self, size=None):
        return self.gen.random(size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, labels={self.labels!r})"

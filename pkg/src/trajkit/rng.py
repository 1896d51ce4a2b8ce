"""Seeded randomness built on the counter-based Philox 4x64 generator.

Philox is counter-based, so a (seed, stream) key pins down the entire
random sequence independently of platform or word size. Every source of
randomness in the toolkit (initialization, shuffling, dropout, sampling)
draws from an RngState, and derived streams keep components decoupled:
consuming extra draws in one component never shifts another.
"""

import numpy as np


class RngState:
    """A named random stream: (seed, stream) -> deterministic draws.

    position counts completed draw calls, so two RngStates with the same
    seed/stream that have made the same call sequence are interchangeable.
    """

    algorithm = "philox4x64"

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.position = 0
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, stream):
        """Child stream; mixing keeps nested derivations collision-free."""
        mixed = (self.stream * 1000003 + int(stream) + 1) & 0xFFFFFFFFFFFFFFFF
        return RngState(self.seed, mixed)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.position += 1
        return self._gen.uniform(low, high, size=size)

    def normal(self, size=None):
        self.position += 1
        return self._gen.standard_normal(size=size)

    def integers(self, low, high, size=None):
        self.position += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        self.position += 1
        return self._gen.permutation(n)

    def choice(self, n, p=None):
        """One categorical draw over range(n) with probabilities p."""
        self.position += 1
        # inverse-CDF on a single uniform; avoids Generator.choice's
        # internal shuffling so the draw count stays one per call
        u = self._gen.uniform()
        if p is None:
            return min(int(u * n), n - 1)
        return int(np.searchsorted(np.cumsum(p), u, side="right").clip(0, n - 1))

    def keep_mask(self, rate, size):
        """Inverted-dropout mask: 0 with probability rate, else 1/(1-rate)."""
        self.position += 1
        keep = self._gen.uniform(size=size) >= rate
        return keep.astype(np.float64) / (1.0 - rate)

    def __repr__(self):
        return (f"RngState(seed={self.seed}, stream={self.stream}, "
                f"algorithm={self.algorithm!r}, position={self.position})")

"""Counter-based random streams.

A stream is fully described by ``(seed, stream, counter)``: every draw is
produced by a Philox generator keyed on ``seed`` and ``stream`` and started
at block ``counter``, after which the counter advances past the blocks used.
Nothing depends on global RNG state.
"""

from __future__ import annotations

import numpy as np

# named sub-streams derived from one experiment seed
STREAMS = {"data": 0, "init": 1, "gumbel": 2, "shuffle": 3, "eval": 4}

_TWO_M53 = 2.0 ** -53


class RngStream:
    def __init__(self, seed, counter=0, stream=0):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(counter)

    @classmethod
    def named(cls, seed, name, counter=0):
        return cls(seed, counter=counter, stream=STREAMS[name])

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def state(self):
        return (self.seed, self.stream, self.counter)

    def raw(self, n):
        """``n`` raw unsigned 64-bit words."""
        key = self.seed + (self.stream << 64)
        bg = np.random.Philox(key=key, counter=self.counter)
        words = bg.random_raw(n)
        # Philox emits four words per block
        self.counter += (n + 3) // 4
        return np.asarray(words, dtype=np.uint64)

    def uniform(self, size=None, low=0.0, high=1.0):
        """Uniform draws on the open interval (low, high)."""
        n = 1 if size is None else int(np.prod(size))
        u = ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        out = low + (high - low) * u
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, low, high, size=None):
        """Integers uniform on the closed range [low, high]."""
        u = self.uniform(size)
        span = high - low + 1
        out = low + np.floor(np.asarray(u) * span).astype(np.int64)
        return int(out) if size is None else out

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")

    def gumbel(self, size):
        return -np.log(-np.log(self.uniform(size)))

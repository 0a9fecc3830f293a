"""Reproducible, independent random streams keyed by ``(seed, index)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """A named random stream.

    Two streams with the same ``(seed, index, path)`` yield identical draws;
    distinct keys map to statistically independent generators through
    :class:`numpy.random.SeedSequence`.
    """

    seed: int
    index: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "index", int(self.index) & _MASK64)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.index, *self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, j: int) -> "RandomStream":
        return RandomStream(self.seed, self.index, (*self.path, int(j)))


def replication_index(n: int, replication: int) -> int:
    """Stream index of one replication at sample size ``n``.

    Packing ``n`` into the high word keeps indices of existing replications
    unchanged when grid points are added.
    """
    if not (0 <= replication < (1 << 32) and 0 <= n < (1 << 32)):
        raise ValueError("n and replication must fit in 32 bits")
    return (int(n) << 32) | int(replication)

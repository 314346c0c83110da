"""Seeded random streams.

Every stream is a PCG64 generator keyed by a tuple of non-negative integers
through ``numpy.random.SeedSequence``. A run keyed by ``(seed,)`` draws its
initial state from ``stream(seed, 0)`` and epoch ``k`` (1-based) from
``stream(seed, k)``; sweeps prepend the master seed and grid index, so a
cell is keyed by ``(master_seed, t_index, seed)``. Streams never share state,
which keeps replicas independent of execution order.
"""

from __future__ import annotations

from typing import Iterable, Union

import numpy as np

SeedKey = Union[int, Iterable[int]]


def as_key(seed: SeedKey) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        key = (int(seed),)
    else:
        key = tuple(int(x) for x in seed)
    if any(x < 0 for x in key):
        raise ValueError(f"seed key entries must be non-negative, got {key}")
    return key


def stream(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def child_stream(seed: SeedKey, index: int) -> np.random.Generator:
    """Generator for sub-stream ``index`` of ``seed``."""
    return stream(*as_key(seed), int(index))

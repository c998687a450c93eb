"""Seed handling on top of numpy's counter-based Philox generator."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def split_seeds(seed: int, k: int) -> list[int]:
    """Derive ``k`` independent child seeds from a master seed.

    Children are spawned from a ``SeedSequence`` so the result depends only
    on ``(seed, k-th index)`` and can be recorded as plain integers.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    children = np.random.SeedSequence(int(seed)).spawn(k)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]

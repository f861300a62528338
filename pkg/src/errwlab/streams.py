"""Seeded random streams.

All randomness goes through Philox (a counter-based 64-bit generator). The
stream for replica ``k`` of a run with seed ``s`` is keyed by hashing the pair
``(s, k)`` through ``SeedSequence``, so results do not depend on how replicas
are scheduled across workers.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def resolve_rng(rng) -> tuple[np.random.Generator, int | None]:
    """Accept a Generator or an integer seed; return the generator and the seed if known."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if isinstance(rng, (int, np.integer)):
        return make_rng(int(rng)), int(rng)
    raise TypeError("expected a numpy Generator or an integer seed")

"""Seedable, splittable random streams.

Every worker derives its own ``numpy.random.Generator`` from ``(seed, *stream_ids)``
so results never depend on scheduling order.
"""

from __future__ import annotations

import os

import numpy as np


def make_rng(seed: int | None, *stream: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *stream)``."""
    if seed is None:
        return np.random.default_rng()
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) for s in stream)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(rng)


def worker_count(default: int = 1) -> int:
    """Worker cap from ``LONGMEM_THREADS`` (falls back to *default*)."""
    raw = os.environ.get("LONGMEM_THREADS")
    if not raw:
        return max(1, default)
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, default)

"""Deterministic derivation of independent random streams.

Every stochastic component takes a Generator built from an integer seed
plus a tuple of string/int tags, so that (seed, purpose) always maps to
the same stream regardless of call order, platform, or thread schedule.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *tags)``.

    Tags are hashed with crc32, so renaming a tag changes the stream but
    reordering unrelated work does not.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [int(seed)] + [zlib.crc32(str(t).encode("utf-8")) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

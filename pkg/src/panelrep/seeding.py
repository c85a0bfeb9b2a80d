"""Deterministic RNG streams derived from one root seed.

Every source of randomness (parameter init, epoch shuffling, synthetic
data) pulls a named stream so runs are reproducible and streams stay
independent of each other.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, *tags: object) -> np.random.Generator:
    """Generator for the stream named by ``tags`` under ``seed``."""
    entropy = [int(seed) & 0xFFFFFFFF] + [
        zlib.crc32(str(t).encode("utf-8")) for t in tags
    ]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

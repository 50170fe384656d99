"""Deterministic RNG derivation.

Every random stream in the package is derived from an integer seed plus a
stable string tag, so independent components never share a stream and the
whole pipeline is reproducible bit for bit. Python's salted ``hash`` is
never used.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(*parts) -> np.random.Generator:
    """Generator keyed by a mixed tuple of ints and strings."""
    entropy = []
    for p in parts:
        if isinstance(p, str):
            entropy.append(zlib.crc32(p.encode("utf-8")))
        elif isinstance(p, (int, np.integer)):
            entropy.append(int(p) & 0xFFFFFFFF)
        else:
            raise TypeError(f"seed parts must be int or str, got {type(p).__name__}")
    return np.random.default_rng(np.random.SeedSequence(entropy))

"""Counter-based random streams keyed by (seed, ..., identifier)."""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(text: str) -> int:
    """64-bit hash of ``text`` that does not depend on PYTHONHASHSEED."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def stream(seed: int, *parts: int | str) -> np.random.Generator:
    """Independent Philox generator for the given seed and path of parts.

    Streams for distinct paths do not overlap, so work keyed by a path can run
    in any order (or in parallel) and produce the same draws.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    entropy = [int(seed)] + [stable_hash(p) if isinstance(p, str) else int(p) for p in parts]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

"""Named, counter-based random streams.

Every consumer derives its generator from ``(seed, *names)`` so results do not
depend on call order or on how work is scheduled across workers.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Return an independent Philox generator for the named sub-stream."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *names) -> int:
    """A 63-bit integer seed for the named sub-stream (for configs that store a seed)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) & (2**63 - 1)

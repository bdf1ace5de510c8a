"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by a
tuple of integers (seed, purpose tag, ...indices).  Streams with distinct
keys are statistically independent and a given key always reproduces the
same sequence, so results do not depend on the order in which streams are
consumed -- the property the deterministic executor and the parallel
synthetic generator rely on.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# Purpose tags keep streams for different uses disjoint under one seed.
TAG_CENTER = 0x01  # synthetic cluster centers
TAG_RECORD = 0x02  # synthetic per-record jitter
TAG_RANDENC = 0x03  # random-encoding ablation vectors
TAG_INIT = 0x04  # initial diffusion noise per node
TAG_STEP = 0x05  # per-(node, step) ancestral noise
TAG_CONDMAP = 0x06  # toy-world condition matrix
TAG_SAMPLE = 0x07  # diversity metric subsampling


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, (z ^ (z >> 31)) & _MASK


def stream_key(*parts: int) -> tuple[int, int]:
    """Mix integer parts into a 128-bit Philox key via a splitmix64 chain."""
    state = 0
    out = 0
    for p in parts:
        state, mixed = _splitmix64((state ^ (int(p) & _MASK)) & _MASK)
        out ^= mixed
    state, lo = _splitmix64(state)
    _, hi = _splitmix64(state ^ out)
    return lo, hi


def stream(*parts: int) -> np.random.Generator:
    """Return an independent generator for the given key parts."""
    lo, hi = stream_key(*parts)
    bitgen = np.random.Philox(key=np.array([lo, hi], dtype=np.uint64))
    return np.random.Generator(bitgen)

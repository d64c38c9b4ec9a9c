"""Deterministic counter-based RNG streams.

Every random draw in the package comes from a Philox stream keyed by
(seed, tag...) through SeedSequence, so runs are reproducible bit-for-bit
and independent phases (chains, steps, pruning rounds) never share or
leak generator state.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_ints(tags: tuple) -> list[int]:
    out = []
    for t in tags:
        if isinstance(t, (int, np.integer)):
            out.append(int(t) & 0xFFFFFFFFFFFFFFFF)
        elif isinstance(t, str):
            out.append(zlib.crc32(t.encode("utf-8")))
        else:
            raise TypeError(f"stream tag must be int or str, got {type(t)!r}")
    return out


def substream(seed: int, *tags) -> np.random.Generator:
    """Philox generator for the stream identified by (seed, *tags)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + _as_ints(tags)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *tags) -> int:
    """Deterministic 64-bit child seed for the stream (seed, *tags)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + _as_ints(tags)
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)

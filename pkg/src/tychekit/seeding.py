"""Deterministic seed derivation from structured keys."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(*keys) -> int:
    """Map a tuple of ints/strings to a 63-bit seed.

    Every random stream in training and evaluation is keyed this way
    (e.g. ``derive_seed(seed, "noise", epoch, index)``) so results do not
    depend on the order in which work is scheduled.
    """
    entropy = []
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            key = int(key)
            if key < 0:
                raise ValueError(f"seed keys must be non-negative, got {key}")
            entropy.append(key)
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))

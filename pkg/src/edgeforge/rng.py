"""Deterministic RNG sub-stream derivation.

Every random draw in the pipeline comes from a generator derived here, so
results are reproducible for a given master seed regardless of worker
scheduling. String keys are folded in via CRC32 (stable across processes,
unlike hash()).
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return an RNG for the sub-stream named by `keys` under `seed`."""
    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            entropy.append(int(key))
    return np.random.default_rng(entropy)


def child_seed(seed: int, *keys: int | str) -> int:
    """Derive a single integer seed for handing to another component."""
    return int(stream(seed, *keys).integers(0, 2**63 - 1))

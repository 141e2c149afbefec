"""Named RNG sub-streams so every component can be replayed in isolation.

All randomness in a run derives from one manifest seed. Each consumer asks
for a stream keyed by (seed, name, ...) and gets an independent generator;
string keys are hashed with crc32, which is stable across platforms.
"""

import zlib

import numpy as np


def _entropy(seed: int, keys) -> list[int]:
    ent = [int(seed)]
    for k in keys:
        if isinstance(k, str):
            ent.append(zlib.crc32(k.encode("utf-8")))
        else:
            ent.append(int(k))
    return ent


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the sub-stream keyed by (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, keys)))


def derive_seed(seed: int, *keys) -> int:
    """Stable integer seed for the sub-stream keyed by (seed, *keys)."""
    return int(np.random.SeedSequence(_entropy(seed, keys)).generate_state(1)[0])

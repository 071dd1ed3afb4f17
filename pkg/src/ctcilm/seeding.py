"""Named random streams derived from one top-level seed.

A stream is ``SeedSequence(seed, spawn_key=(crc32(name),))``, so adding a new
consumer never shifts the draws of existing ones.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def child_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(0, 2**31 - 1))

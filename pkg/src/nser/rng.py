"""Named random sub-streams derived from one root seed."""

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` under root ``seed``.

    The same (seed, name, extra) always yields the same stream, so components
    can be varied without perturbing each other's randomness.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8")), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))

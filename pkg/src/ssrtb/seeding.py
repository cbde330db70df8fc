"""Named, reproducible random sub-streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: object) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def stream(seed: int, *names: object) -> np.random.Generator:
    """Return a generator keyed by ``(seed, *names)``.

    Streams with different names are statistically independent, and the same
    key always yields the same sequence.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *map(_key, names)]))


def derive_seed(seed: int, *names: object) -> int:
    return int(stream(seed, *names).integers(0, 2**31 - 1))

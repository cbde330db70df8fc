"""Money is accounted in integer micro-units so budget identities hold exactly."""

from __future__ import annotations

import numpy as np

MICROS = 1_000_000


def to_micros(x):
    if isinstance(x, np.ndarray):
        return np.rint(x * MICROS).astype(np.int64)
    return int(round(float(x) * MICROS))


def from_micros(m):
    if isinstance(m, np.ndarray):
        return m.astype(np.float64) / MICROS
    return int(m) / MICROS

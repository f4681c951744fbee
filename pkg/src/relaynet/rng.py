"""Counter-based random streams.

Every draw of a Monte Carlo run gets its own Philox stream keyed by
``(seed, stream, index)``, so a sample never depends on which worker or in
which order it was produced.
"""

from __future__ import annotations

import numpy as np

RELAY_SIDE = 1
DESTINATION_SIDE = 2
DECISION = 3
COMPRESSION = 4
FLAT = 5

_MASK64 = (1 << 64) - 1
_INDEX_BITS = 48


def stream(seed: int, tag: int, index: int) -> np.random.Generator:
    if not 0 <= index < (1 << _INDEX_BITS):
        raise ValueError(f"draw index {index} out of range")
    key = np.array([seed & _MASK64, (tag << _INDEX_BITS) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

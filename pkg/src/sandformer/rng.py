"""Splittable counter-based random generators.

Every stochastic component in the package draws from a Philox generator
keyed by (seed, context labels). Keying, rather than sequential state,
makes each draw independent of iteration order: sample 17 of a dataset or
step 400 of a training run can be regenerated in isolation.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_MASK64 = (1 << 64) - 1


def keyed_rng(seed: int, *parts: int | str) -> np.random.Generator:
    """Generator keyed by a global seed plus any number of context labels."""
    h = hashlib.sha256()
    h.update(struct.pack("<Q", seed & _MASK64))
    for part in parts:
        if isinstance(part, str):
            h.update(b"s")
            h.update(part.encode("utf-8"))
        else:
            h.update(b"i")
            h.update(struct.pack("<q", int(part)))
    key = np.frombuffer(h.digest()[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

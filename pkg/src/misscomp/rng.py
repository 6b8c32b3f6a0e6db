"""Deterministic counter-based RNG streams.

Every consumer of randomness derives its own stream from a base seed plus
a structured key (scenario id, replicate number, purpose tag, ...), so
results never depend on scheduling or parallelism degree.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _words(key) -> list[int]:
    if isinstance(key, (tuple, list)):
        out: list[int] = []
        for k in key:
            out.extend(_words(k))
        return out
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 8, 4)]
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        out = [k & 0xFFFFFFFF]
        k >>= 32
        while k:
            out.append(k & 0xFFFFFFFF)
            k >>= 32
        return out
    raise TypeError(f"unsupported stream key {key!r}")


def substream(base_seed: int, *keys) -> np.random.Generator:
    """Philox generator for (base_seed, *keys); same inputs, same stream."""
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(_words(keys)))
    return np.random.Generator(np.random.Philox(seq))

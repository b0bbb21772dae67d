"""Counter-based deterministic randomness, keyed by (seed, purpose, step, layer).

Every consumer of randomness asks for a named stream instead of sharing a
mutable generator. The same (seed, purpose, step, layer) tuple always yields
the same value sequence, independent of call order, thread, or batch size.
This is what lets a partition draw identical randomness for every element of
a batch without any shared state.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def _purpose_key(purpose: str) -> int:
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class StreamRng:
    """Factory of independent, reproducible random streams."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _U64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)

    def stream(self, purpose: str, step: int = 0, layer: int = 0) -> np.random.Generator:
        """Return a fresh generator for the (purpose, step, layer) stream."""
        entropy = [self.seed, _purpose_key(purpose), int(step) & _U64, int(layer) & _U64]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def __repr__(self) -> str:
        return f"StreamRng(seed={self.seed})"

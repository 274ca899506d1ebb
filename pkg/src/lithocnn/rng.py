"""Splittable, counter-based random number handles.

Every stochastic component (dropout, augmentation, splits, weight init) draws
from an ``RngHandle`` identified by a ``(seed, stream)`` pair. Streams are
derived from stable string/integer labels via BLAKE2, never from Python's
salted ``hash()``, so identical handles produce identical draw sequences on
every platform and independently of execution order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash64(*labels) -> int:
    """Collapse arbitrary labels into a stable 64-bit stream id."""
    h = hashlib.blake2b(digest_size=8)
    for label in labels:
        h.update(repr(label).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngHandle:
    """Deterministic handle on a Philox counter-based stream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this handle's stream."""
        key = (self.seed << 64) | self.stream
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels) -> "RngHandle":
        """Derive an independent stream; same labels always give the same child."""
        return RngHandle(self.seed, stable_hash64(self.stream, *labels))

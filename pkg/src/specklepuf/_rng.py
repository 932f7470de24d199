"""Seeded random streams.

Every stochastic routine takes either an integer seed or a ready
``numpy.random.Generator``.  Seeds are expanded through ``SeedSequence`` with
string labels hashed into the entropy pool, so independent substreams can be
addressed by name (e.g. ``make_rng(seed, "fresh")``).  PCG64 is portable across
platforms, which is what makes serialized tensors reproducible bit for bit.
"""
from __future__ import annotations

import hashlib

import numpy as np

SeedLike = "int | np.random.Generator | None"


def _label_word(label: object) -> int:
    digest = hashlib.sha256(str(label).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def make_rng(seed: int, *labels: object) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    words = [seed & 0xFFFFFFFF, seed >> 32] + [_label_word(x) for x in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def as_rng(seed_or_rng, *labels: object) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    if seed_or_rng is None:
        return np.random.default_rng()
    return make_rng(int(seed_or_rng), *labels)

"""Hamming distances between keys and HD ensembles."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class HdKind(str, enum.Enum):
    INTRA = "intra"
    INTER_SAME_CHALLENGE = "inter_same_challenge"  # Inter-HD I
    INTER_SAME_PUF = "inter_same_puf"  # Inter-HD II


@dataclass(frozen=True)
class HdSample:
    x: float
    L: int
    kind: HdKind

    def __post_init__(self):
        if not 0.0 <= self.x <= 1.0:
            raise ValueError("normalized HD must lie in [0, 1]")
        if abs(self.x * self.L - round(self.x * self.L)) > 1e-9:
            raise ValueError("x * L must be an integer number of differing bits")

    @property
    def mismatches(self) -> int:
        return round(self.x * self.L)


@dataclass(frozen=True)
class HdEnsemble:
    samples: tuple[HdSample, ...]
    mean: float
    variance: float

    @property
    def values(self) -> np.ndarray:
        return np.array([s.x for s in self.samples])


def _bits(key) -> np.ndarray:
    return np.asarray(getattr(key, "bits", key), dtype=np.uint8)


def hamming_normalized(a, b) -> float:
    """Fraction of positions where two equal-length keys differ."""
    x, y = _bits(a), _bits(b)
    if x.shape != y.shape:
        raise ValueError(f"key lengths differ: {x.size} vs {y.size}")
    return float(np.count_nonzero(x != y)) / x.size


def pairwise_mismatches(keys: Sequence) -> np.ndarray:
    """Upper-triangle differing-bit counts for every pair of keys."""
    mat = np.stack([_bits(k) for k in keys]).astype(np.int64)
    diff = mat @ (1 - mat).T
    diff = diff + diff.T
    i, j = np.triu_indices(len(keys), k=1)
    return diff[i, j]


def hd_ensemble(keys: Sequence, kind: HdKind | str) -> HdEnsemble:
    """All pairwise normalized HDs among ``keys``.

    For the intra kind the keys are remeasured copies of one key; for the
    inter kinds they come from different PUFs (I) or different challenge
    sequences on one PUF (II).  The arithmetic is the same.
    """
    kind = HdKind(kind)
    keys = list(keys)
    if len(keys) < 2:
        raise ValueError("an HD ensemble needs at least 2 keys")
    lengths = {_bits(k).size for k in keys}
    if len(lengths) != 1:
        raise ValueError(f"keys have mixed lengths {sorted(lengths)}")
    (L,) = lengths
    x = pairwise_mismatches(keys) / L
    samples = tuple(HdSample(float(v), L, kind) for v in x)
    return HdEnsemble(samples, float(x.mean()), float(x.var()))

"""Balanced binary DMD challenges and their hex codec."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._rng import as_rng


class UnbalancedChallengeError(ValueError):
    pass


def challenge_id_for(bits: np.ndarray) -> str:
    return hashlib.sha256(np.packbits(bits).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class Challenge:
    bits: np.ndarray
    challenge_id: str = field(default="", compare=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size == 0:
            raise ValueError("challenge bits must be a non-empty vector")
        if np.any(bits > 1):
            raise ValueError("challenge bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if not self.challenge_id:
            object.__setattr__(self, "challenge_id", challenge_id_for(bits))

    def __eq__(self, other):
        return isinstance(other, Challenge) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.challenge_id)

    @property
    def m(self) -> int:
        return self.bits.size

    @property
    def balanced(self) -> bool:
        return 2 * int(self.bits.sum()) == self.bits.size

    @property
    def hex(self) -> str:
        return encode_challenge(self)


def _check_m(m: int) -> None:
    if m < 2 or m % 2:
        raise UnbalancedChallengeError(
            f"m={m}: challenges need an even length so exactly m/2 segments are on"
        )


def generate_challenge(seed_or_rng, m: int) -> Challenge:
    """Uniform draw from the m-bit vectors with exactly m/2 ones."""
    _check_m(m)
    rng = as_rng(seed_or_rng, "challenge")
    template = np.zeros(m, dtype=np.uint8)
    template[: m // 2] = 1
    return Challenge(rng.permutation(template))


def generate_challenges(seed_or_rng, m: int, n: int) -> list[Challenge]:
    _check_m(m)
    rng = as_rng(seed_or_rng, "challenge")
    block = np.zeros((n, m), dtype=np.uint8)
    block[:, : m // 2] = 1
    block = rng.permuted(block, axis=1)
    return [Challenge(row) for row in block]


def challenge_stream(seed_or_rng, m: int, chunk: int = 256) -> Iterator[Challenge]:
    """Endless stream of balanced challenges."""
    rng = as_rng(seed_or_rng, "challenge")
    while True:
        yield from generate_challenges(rng, m, chunk)


def challenge_matrix(challenges: Sequence[Challenge]) -> np.ndarray:
    if not challenges:
        return np.zeros((0, 0), dtype=np.uint8)
    lengths = {c.m for c in challenges}
    if len(lengths) != 1:
        raise ValueError(f"challenges have mixed lengths {sorted(lengths)}")
    return np.stack([c.bits for c in challenges])


def log2_challenge_space(m: int) -> float:
    """log2 of C(m, m/2), the number of distinct balanced challenges."""
    _check_m(m)
    return (math.lgamma(m + 1) - 2 * math.lgamma(m // 2 + 1)) / math.log(2)


def binary_entropy(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -p * np.log2(p) - (1 - p) * np.log2(1 - p)
    return np.where((p <= 0) | (p >= 1), 0.0, h)


def challenge_bit_entropy(challenges: Iterable[Challenge]) -> np.ndarray:
    """Shannon entropy (bits) of each challenge position across the list."""
    challenges = list(challenges)
    if not challenges:
        raise ValueError("need at least one challenge")
    return binary_entropy(challenge_matrix(challenges).mean(axis=0))


def encode_challenge(c: Challenge) -> str:
    return np.packbits(c.bits).tobytes().hex()


def decode_challenge(text: str, m: int) -> Challenge:
    _check_m(m)
    nbytes = (m + 7) // 8
    if len(text) != 2 * nbytes or text != text.lower():
        raise ValueError(f"expected {2 * nbytes} lowercase hex characters for m={m}")
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    bits = np.unpackbits(raw)
    if np.any(bits[m:]):
        raise ValueError("non-zero padding bits")
    c = Challenge(bits[:m])
    if not c.balanced:
        raise UnbalancedChallengeError(f"decoded challenge has {int(c.bits.sum())} ones, need {m // 2}")
    return c

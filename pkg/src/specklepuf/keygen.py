"""Binary keys from photon counts by median thresholding."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import as_rng
from .challenge import Challenge, binary_entropy
from .measurement import DetectorConfig, apply_noise, noiseless_intensities
from .puf import PufInstance


@dataclass(frozen=True)
class ThresholdSpec:
    threshold: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold N_m must be positive")
        if self.delta < 0 or self.delta >= self.threshold:
            raise ValueError("guard band must satisfy 0 <= delta < N_m")


@dataclass(frozen=True, eq=False)
class BinaryKey:
    bits: np.ndarray
    source_challenge_ids: tuple[str, ...]
    puf_id: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size < 1:
            raise ValueError("a key needs at least one bit")
        if len(self.source_challenge_ids) != bits.size:
            raise ValueError("one source challenge id per key bit is required")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "source_challenge_ids", tuple(self.source_challenge_ids))

    def __eq__(self, other):
        return (
            isinstance(other, BinaryKey)
            and np.array_equal(self.bits, other.bits)
            and self.source_challenge_ids == other.source_challenge_ids
            and self.puf_id == other.puf_id
        )

    def __hash__(self):
        return hash((self.hex, self.source_challenge_ids, self.puf_id))

    def __len__(self) -> int:
        return self.bits.size

    @property
    def hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    def save(self, path: str | Path) -> None:
        """Write the packed key and a ``.ids`` sidecar with one challenge id per line."""
        path = Path(path)
        path.write_text(f"{len(self)} {self.hex}\n")
        path.with_name(path.name + ".ids").write_text("".join(f"{cid}\n" for cid in self.source_challenge_ids))

    @classmethod
    def load(cls, path: str | Path) -> "BinaryKey":
        path = Path(path)
        length, text = path.read_text().split()
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(text), dtype=np.uint8))[: int(length)]
        ids = path.with_name(path.name + ".ids").read_text().split()
        return cls(bits, tuple(ids))


def median_threshold(samples) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("median of an empty sample")
    return float(np.median(x))


def extract_bits(counts, spec: ThresholdSpec) -> tuple[np.ndarray, np.ndarray]:
    """Threshold counts; returns (bits, kept_mask) with bits zeroed where discarded.

    A count is discarded when the guard band is non-zero and it lies within
    ``delta`` of the threshold.  Ties at the threshold give 0.
    """
    if isinstance(counts, np.ndarray):
        n = counts.astype(float, copy=False)
    else:
        n = np.asarray([getattr(c, "photon_count", c) for c in counts], dtype=float)
    bits = (n > spec.threshold).astype(np.uint8)
    if spec.delta > 0:
        kept = np.abs(n - spec.threshold) > spec.delta
    else:
        kept = np.ones(n.shape, dtype=bool)
    return np.where(kept, bits, 0).astype(np.uint8), kept


def session_bits(counts, delta_rel: float = 0.0) -> tuple[np.ndarray, np.ndarray, float]:
    """Bits against the session's own median; guard band relative to it."""
    n_m = median_threshold(counts)
    if delta_rel == 0:
        # no guard band, so a zero median (a dark detector) still yields bits
        n = np.asarray([getattr(c, "photon_count", c) for c in counts], dtype=float)
        return (n > n_m).astype(np.uint8), np.ones(n.shape, dtype=bool), n_m
    bits, kept = extract_bits(counts, ThresholdSpec(n_m, delta_rel * n_m))
    return bits, kept, n_m


class StreamExhaustedError(RuntimeError):
    pass


def grow_session(n_measured: int, n_kept: int, L: int) -> int:
    """How many more challenges to measure when only ``n_kept`` of ``L`` bits survived."""
    frac = max(n_kept / n_measured, 0.02)
    return max(1, math.ceil((L - n_kept) / frac))


def guarded_session(counts: np.ndarray, L: int, delta_rel: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Replay ``build_key``'s growth rule on a pre-measured count sequence.

    Returns (bits, indices of the L kept positions, session length).
    """
    n = L
    while True:
        if n > counts.size:
            raise StreamExhaustedError(f"{counts.size} counts are not enough for {L} kept bits")
        bits, kept, _ = session_bits(counts[:n], delta_rel)
        n_kept = int(kept.sum())
        if n_kept >= L:
            idx = np.flatnonzero(kept)[:L]
            return bits[idx], idx, n
        n += grow_session(n, n_kept, L)


def build_key(
    puf: PufInstance,
    challenges: Iterable[Challenge],
    cfg: DetectorConfig,
    L: int,
    delta_rel: float = 0.0,
    seed_or_rng=None,
) -> BinaryKey:
    """Measure challenges until ``L`` bits survive the guard band.

    The threshold is the median of everything measured in this session, so the
    buffer is re-thresholded every time it grows.
    """
    if L < 1:
        raise ValueError("key length must be >= 1")
    rng = as_rng(seed_or_rng, "keygen")
    source = iter(challenges)
    measured: list[Challenge] = []
    counts = np.zeros(0, dtype=np.int64)
    need = L
    while True:
        batch = list(itertools.islice(source, need))
        if batch:
            measured.extend(batch)
            fresh = apply_noise(noiseless_intensities(puf, batch, cfg), cfg, rng)
            counts = np.concatenate([counts, fresh])
        bits, kept, n_m = session_bits(counts, delta_rel)
        n_kept = int(kept.sum())
        if n_kept >= L:
            break
        if not batch or len(batch) < need:
            raise StreamExhaustedError(
                f"challenge stream ran out after {len(measured)} challenges: {n_kept} of {L} bits kept"
            )
        need = grow_session(len(measured), n_kept, L)
    idx = np.flatnonzero(kept)[:L]
    return BinaryKey(
        bits[idx],
        tuple(measured[i].challenge_id for i in idx),
        puf.puf_id,
        {"median": n_m, "delta_rel": delta_rel, "consumed": len(measured)},
    )


def threshold_sweep(samples, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """Probability of a 1 bit and its entropy for each candidate threshold."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 1000:
        raise ValueError("threshold sweep needs at least 1000 samples")
    thresholds = np.asarray(thresholds, dtype=float)
    p_one = 1.0 - np.searchsorted(x, thresholds, side="right") / x.size
    return p_one, binary_entropy(p_one)


def key_from_counts(counts: Sequence[int], challenge_ids: Sequence[str], puf_id: str = "") -> BinaryKey:
    bits, _, n_m = session_bits(counts)
    return BinaryKey(bits, tuple(challenge_ids), puf_id, {"median": n_m})

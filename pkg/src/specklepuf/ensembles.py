"""Key ensembles for HD statistics and reduction sweeps.

``SimContext`` holds one genuine PUF, a pool of enrollment challenges and a set
of impostor PUFs.  Noiseless intensities are computed once and cached; only the
noise is redrawn when detector settings change, which keeps sweeps over L,
mean photon count and guard band cheap and uses common random numbers across
grid points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from ._rng import make_rng
from .challenge import Challenge, generate_challenges
from .keygen import BinaryKey, StreamExhaustedError, guarded_session, session_bits
from .measurement import DetectorConfig, apply_noise, noiseless_intensities
from .puf import PufInstance, synthesize_puf
from .stats.hamming import hamming_normalized


def keys_from_counts(counts: np.ndarray) -> np.ndarray:
    """Row-wise median-split keys for a (n_keys, L) count matrix."""
    med = np.median(counts, axis=1, keepdims=True)
    return (counts > med).astype(np.uint8)


def inter_keys_same_challenge(
    pufs: list[PufInstance], challenges: list[Challenge], cfg: DetectorConfig, seed: int
) -> list[BinaryKey]:
    """One key per PUF on a common challenge sequence (Inter-HD I)."""
    keys = []
    ids = tuple(c.challenge_id for c in challenges)
    for i, puf in enumerate(pufs):
        counts = apply_noise(noiseless_intensities(puf, challenges, cfg), cfg, make_rng(seed, "inter", i))
        bits, _, n_m = session_bits(counts)
        keys.append(BinaryKey(bits, ids, puf.puf_id, {"median": n_m}))
    return keys


def remeasured_keys(
    puf: PufInstance, challenges: list[Challenge], cfg: DetectorConfig, n_copies: int, seed: int
) -> list[BinaryKey]:
    """Repeated measurements of the same key (Intra-HD)."""
    intensity = noiseless_intensities(puf, challenges, cfg)
    ids = tuple(c.challenge_id for c in challenges)
    keys = []
    for i in range(n_copies):
        bits, _, n_m = session_bits(apply_noise(intensity, cfg, make_rng(seed, "remeasure", i)))
        keys.append(BinaryKey(bits, ids, puf.puf_id, {"median": n_m}))
    return keys


def inter_keys_same_puf(
    puf: PufInstance, n_keys: int, L: int, cfg: DetectorConfig, seed: int
) -> list[BinaryKey]:
    """Keys from one PUF on disjoint random challenge sequences (Inter-HD II)."""
    challenges = generate_challenges(make_rng(seed, "inter2"), puf.segment_count, n_keys * L)
    counts = apply_noise(noiseless_intensities(puf, challenges, cfg), cfg, make_rng(seed, "inter2-noise"))
    keys = []
    for i in range(n_keys):
        block = counts[i * L : (i + 1) * L]
        bits, _, n_m = session_bits(block)
        ids = tuple(c.challenge_id for c in challenges[i * L : (i + 1) * L])
        keys.append(BinaryKey(bits, ids, puf.puf_id, {"median": n_m}))
    return keys


def balanced_selection(bits: np.ndarray, kept: np.ndarray, L: int) -> np.ndarray:
    """Indices of the first ceil(L/2) kept ones and floor(L/2) kept zeros, in order."""
    ones = np.flatnonzero(kept & (bits == 1))[: (L + 1) // 2]
    zeros = np.flatnonzero(kept & (bits == 0))[: L // 2]
    if ones.size + zeros.size < L:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate([ones, zeros]))


@dataclass
class EnsembleStats:
    p1: float
    p2: float
    var1: float
    var2: float
    n_intra: int
    n_inter: int
    L: int

    @property
    def p1_floor(self) -> float:
        """Intra mean with half a pseudo-count, so zero observed flips stay usable."""
        return max(self.p1, 0.5 / (self.n_intra * self.L))


@dataclass
class SimContext:
    seed: int = 0
    m: int = config.SEGMENTS
    S: int = config.CELLS
    pool_size: int = 4096
    n_impostors: int = 20
    n_copies: int = 50
    _genuine: PufInstance | None = field(default=None, repr=False)
    _pool: np.ndarray | None = field(default=None, repr=False)
    _genuine_raw: np.ndarray | None = field(default=None, repr=False)
    _impostors: list = field(default_factory=list, repr=False)
    _impostor_raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def genuine(self) -> PufInstance:
        if self._genuine is None:
            self._genuine = synthesize_puf(self.seed, self.m, self.S)
        return self._genuine

    @property
    def pool(self) -> np.ndarray:
        if self._pool is None:
            block = np.zeros((self.pool_size, self.m), dtype=np.uint8)
            block[:, : self.m // 2] = 1
            self._pool = make_rng(self.seed, "pool").permuted(block, axis=1)
        return self._pool

    def _unit(self, cfg: DetectorConfig) -> DetectorConfig:
        return DetectorConfig(1.0, suppress_background=cfg.suppress_background)

    def genuine_intensity(self, cfg: DetectorConfig) -> np.ndarray:
        if self._genuine_raw is None:
            self._genuine_raw = noiseless_intensities(self.genuine, self.pool, self._unit(cfg))
        return self._genuine_raw * cfg.mean_photon_target

    def impostor_intensity(self, idx: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
        """(n_impostors, len(idx)) intensities, computed lazily per pool index."""
        if not self._impostors:
            self._impostors = [
                synthesize_puf(self.seed + 1 + i, self.m, self.S) for i in range(self.n_impostors)
            ]
            self._impostor_raw = np.full((self.n_impostors, self.pool_size), np.nan)
        missing = idx[np.isnan(self._impostor_raw[0, idx])]
        if missing.size:
            for i, puf in enumerate(self._impostors):
                self._impostor_raw[i, missing] = noiseless_intensities(puf, self.pool[missing], self._unit(cfg))
        return self._impostor_raw[:, idx] * cfg.mean_photon_target

    def run(
        self,
        L: int,
        cfg: DetectorConfig,
        delta_rel: float = 0.0,
        noise_seed: int = 0,
        balanced: bool = False,
        n_enrollments: int = 1,
    ) -> EnsembleStats:
        """Enroll with a guard band, then verify genuine copies and impostors.

        p1 is the mean HD between the enrolled key and each remeasured copy;
        p2 the mean HD between the enrolled key and each impostor's key on the
        same challenges.  Verification keys use their own median, no guard band.
        Enrollment follows ``build_key`` (session grown until L bits survive,
        first L kept).  With ``balanced`` the key instead takes L/2 kept ones
        and L/2 kept zeros thresholded at the whole-pool median, so the
        verifier's median falls inside the discarded gap.
        Statistics are pooled over ``n_enrollments`` independent enrollments.
        """
        genuine = self.genuine_intensity(cfg)
        intra, inter = [], []
        for e in range(n_enrollments):
            enroll_counts = apply_noise(genuine, cfg, make_rng(noise_seed, "enroll", e))
            if balanced:
                bits, kept, _ = session_bits(enroll_counts, delta_rel)
                idx = balanced_selection(bits, kept, L)
                if idx.size < L:
                    raise StreamExhaustedError(f"pool too small for {L} balanced bits at delta={delta_rel}")
                k0 = bits[idx]
            else:
                k0, idx, _ = guarded_session(enroll_counts, L, delta_rel)
            rng = make_rng(noise_seed, "verify", e)
            copies = apply_noise(np.broadcast_to(genuine[idx], (self.n_copies, L)), cfg, rng)
            intra.append((keys_from_counts(copies) != k0).mean(axis=1))
            imp = apply_noise(self.impostor_intensity(idx, cfg), cfg, rng)
            inter.append((keys_from_counts(imp) != k0).mean(axis=1))
        intra, inter = np.concatenate(intra), np.concatenate(inter)
        return EnsembleStats(
            float(intra.mean()), float(inter.mean()), float(intra.var()), float(inter.var()),
            intra.size, inter.size, L,
        )


def mean_pairwise_hd(keys: list[BinaryKey]) -> float:
    n = len(keys)
    total = sum(hamming_normalized(keys[i], keys[j]) for i in range(n) for j in range(i + 1, n))
    return total / (n * (n - 1) / 2)


def inter_puf_bits(
    n_pufs: int,
    block_length: int,
    cfg: DetectorConfig,
    seed: int,
    m: int = config.SEGMENTS,
    S: int = config.CELLS,
) -> np.ndarray:
    """Concatenated keys of ``n_pufs`` distinct PUFs on one common challenge sequence.

    Each PUF contributes one ``block_length``-bit key thresholded at its own
    median, so every block is balanced up to ties.
    """
    challenges = generate_challenges(make_rng(seed, "battery-challenges"), m, block_length)
    out = np.empty(n_pufs * block_length, dtype=np.uint8)
    for i in range(n_pufs):
        puf = synthesize_puf(seed + 1 + i, m, S)
        counts = apply_noise(noiseless_intensities(puf, challenges, cfg), cfg, make_rng(seed, "battery-noise", i))
        out[i * block_length : (i + 1) * block_length] = session_bits(counts)[0]
    return out

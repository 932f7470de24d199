"""Single-pixel photon-count simulation.

The detected field in speckle cell ``s`` is ``sum_k t[s, k] * r_k`` with unit
illumination on every segment.  By default the zero-spatial-frequency part of
the DMD pattern is removed before it reaches the PUF (``r_k`` is replaced by
``r_k - mean(r)``): with 0/1 patterns that part is the same for every balanced
challenge, so leaving it in adds a fixed background field per cell and the
fitted gamma shape comes out near 4S/3 instead of S.  Set
``suppress_background=False`` to get the raw sum.

The summed cell intensity is rescaled so that its mean over the balanced
challenge ensemble of *this* PUF equals ``mean_photon_target``; the noise chain
is then multiplicative laser jitter, photon shot noise and dark counts (added
to the Poisson rate).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config
from ._rng import as_rng
from .challenge import Challenge, challenge_matrix
from .puf import PufInstance

_CHUNK = 4096


@dataclass(frozen=True)
class DetectorConfig:
    mean_photon_target: float = config.MEAN_PHOTONS
    shot_noise: bool = False
    dark_rate: float = config.DARK_RATE
    intensity_jitter_rel: float = config.INTENSITY_JITTER_REL
    integration_window: float = config.INTEGRATION_WINDOW_MS
    suppress_background: bool = True

    def __post_init__(self):
        if not self.mean_photon_target > 0:
            raise ValueError("mean photon count must be positive")
        if self.dark_rate < 0:
            raise ValueError("dark rate must be non-negative")
        if self.intensity_jitter_rel < 0:
            raise ValueError("intensity jitter must be non-negative")
        if self.integration_window <= 0:
            raise ValueError("integration window must be positive")

    @classmethod
    def calibrated(cls, mean_photon_target: float = config.MEAN_PHOTONS) -> "DetectorConfig":
        """Noise mix that reproduces the measured intra-HD of 0.056 at L=150."""
        return cls(mean_photon_target=mean_photon_target)

    @classmethod
    def shot_noise_only(cls, mean_photon_target: float = config.MEAN_PHOTONS) -> "DetectorConfig":
        return cls(mean_photon_target, shot_noise=True, dark_rate=0.0, intensity_jitter_rel=0.0)

    @classmethod
    def noiseless(cls, mean_photon_target: float = config.MEAN_PHOTONS) -> "DetectorConfig":
        return cls(mean_photon_target, shot_noise=False, dark_rate=0.0, intensity_jitter_rel=0.0)


@dataclass(frozen=True)
class ResponseSample:
    challenge_id: str
    photon_count: int
    noiseless_intensity: float


def _parts(puf: PufInstance) -> tuple[np.ndarray, np.ndarray]:
    return puf.amplitude * np.cos(puf.phase), puf.amplitude * np.sin(puf.phase)


def ensemble_mean_intensity(puf: PufInstance, suppress_background: bool = True, _re_im=None) -> float:
    """Exact mean of the raw cell-summed intensity over all balanced challenges."""
    re, im = _re_im if _re_im is not None else _parts(puf)
    m = puf.segment_count
    power = np.sum(puf.amplitude**2, axis=1)
    coherent = re.sum(axis=1) ** 2 + im.sum(axis=1) ** 2
    if suppress_background:
        per_cell = 0.25 * (m * power - coherent) / (m - 1)
    else:
        pair = (m / 2 - 1) / (2 * (m - 1))
        per_cell = 0.5 * power + pair * (coherent - power)
    return float(per_cell.sum())


def raw_intensities(
    puf: PufInstance, patterns: np.ndarray, suppress_background: bool = True, _re_im=None
) -> np.ndarray:
    """Cell-summed |field|^2 for each row of a (n, m) 0/1 pattern matrix."""
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    if patterns.shape[1] != puf.segment_count:
        raise ValueError(
            f"challenge length {patterns.shape[1]} does not match PUF segment count {puf.segment_count}"
        )
    re, im = _re_im if _re_im is not None else _parts(puf)
    re, im = np.ascontiguousarray(re.T), np.ascontiguousarray(im.T)
    out = np.empty(patterns.shape[0])
    for lo in range(0, patterns.shape[0], _CHUNK):
        block = patterns[lo : lo + _CHUNK]
        if suppress_background:
            block = block - block.mean(axis=1, keepdims=True)
        out[lo : lo + _CHUNK] = np.einsum("ij,ij->i", block @ re, block @ re) + np.einsum(
            "ij,ij->i", block @ im, block @ im
        )
    return out


def noiseless_intensities(puf: PufInstance, challenges, cfg: DetectorConfig) -> np.ndarray:
    """Intensities in photon units, before jitter, shot noise and dark counts."""
    patterns = challenges if isinstance(challenges, np.ndarray) else challenge_matrix(list(challenges))
    parts = _parts(puf)
    raw = raw_intensities(puf, patterns, cfg.suppress_background, parts)
    mean = ensemble_mean_intensity(puf, cfg.suppress_background, parts)
    return raw * (cfg.mean_photon_target / mean)


def apply_noise(intensity: np.ndarray, cfg: DetectorConfig, seed_or_rng) -> np.ndarray:
    """Turn noiseless intensities into integer photon counts."""
    rng = as_rng(seed_or_rng, "noise")
    intensity = np.asarray(intensity, dtype=float)
    rate = intensity
    if cfg.intensity_jitter_rel > 0:
        jitter = 1.0 + cfg.intensity_jitter_rel * rng.standard_normal(intensity.shape)
        rate = intensity * np.clip(jitter, 0.0, None)
    rate = rate + cfg.dark_rate
    if cfg.shot_noise:
        return rng.poisson(rate).astype(np.int64)
    return np.rint(rate).astype(np.int64)


def measure_counts(puf: PufInstance, challenges, cfg: DetectorConfig, seed_or_rng) -> np.ndarray:
    return apply_noise(noiseless_intensities(puf, challenges, cfg), cfg, seed_or_rng)


def _check_balanced(challenges: Sequence[Challenge]) -> None:
    for c in challenges:
        if not c.balanced:
            raise ValueError(f"challenge {c.challenge_id} is not balanced ({int(c.bits.sum())} of {c.m} on)")


def respond_batch(
    puf: PufInstance,
    challenges: Sequence[Challenge],
    cfg: DetectorConfig,
    seed_or_rng,
    allow_unbalanced: bool = False,
) -> list[ResponseSample]:
    """Measure each challenge once; noise draws follow challenge order."""
    challenges = list(challenges)
    if not challenges:
        return []
    if not allow_unbalanced:
        _check_balanced(challenges)
    intensity = noiseless_intensities(puf, challenges, cfg)
    counts = apply_noise(intensity, cfg, seed_or_rng)
    return [
        ResponseSample(c.challenge_id, int(n), float(i))
        for c, n, i in zip(challenges, counts, intensity)
    ]


def respond(
    puf: PufInstance, c: Challenge, cfg: DetectorConfig, seed_or_rng, allow_unbalanced: bool = False
) -> ResponseSample:
    return respond_batch(puf, [c], cfg, seed_or_rng, allow_unbalanced)[0]


def write_responses_csv(samples: Sequence[ResponseSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["challenge_id", "N"])
        for s in samples:
            writer.writerow([s.challenge_id, s.photon_count])


def read_responses_csv(path: str | Path) -> list[tuple[str, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(row["challenge_id"], int(row["N"])) for row in reader]


def gamma_count_pmf(N, mean: float, shape: float):
    """Gamma law for photon counts with mean ``mean`` and shape ``shape``.

    The continuous density is evaluated at the (integer) counts directly.
    """
    if mean <= 0 or shape <= 0:
        raise ValueError("mean and shape must be positive")
    N = np.asarray(N, dtype=float)
    if np.any(N < 0):
        raise ValueError("photon counts must be non-negative")
    log_norm = shape * math.log(shape / mean) - math.lgamma(shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = log_norm + (shape - 1) * np.log(N) - shape * N / mean
    if shape == 1:
        log_p = np.where(N == 0, log_norm, log_p)
    out = np.exp(log_p)
    return float(out) if out.ndim == 0 else out


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class GammaFit:
    mean: float
    shape: float

    @property
    def narrow(self) -> bool:
        """True when the fit says the speckle is far smaller than the detector."""
        return self.shape > 1e4


def fit_gamma(samples) -> GammaFit:
    """Method-of-moments gamma fit: shape = mean^2 / variance."""
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise ValueError(f"need at least 100 samples for a gamma fit, got {x.size}")
    mean = float(x.mean())
    var = float(x.var())
    if var <= 0 or mean <= 0:
        raise DegenerateFitError("zero variance: speckle far smaller than detector, shape unbounded")
    return GammaFit(mean, mean * mean / var)

"""Binomial HD model, decision threshold and FAR/FRR.

All binomial tails are summed in log space so rates far below 1e-300 of the
double range are still resolved before the final exponentiation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .hamming import HdSample

# Guards floor(L * x_c) against x_c values like 0.22 that land a hair under
# an integer after multiplication.
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class BinomialFit:
    p: float
    L: int
    n_samples: int = 0
    variance: float = float("nan")

    @property
    def degenerate(self) -> bool:
        return not 0.0 < self.p < 1.0

    @property
    def effective_bits(self) -> float:
        """Number of independent bits implied by the observed HD variance."""
        if self.degenerate or not self.variance > 0:
            return float("nan")
        return self.p * (1 - self.p) / self.variance

    def independent(self, tolerance: float = 0.2) -> bool:
        return abs(self.effective_bits / self.L - 1.0) <= tolerance

    def density(self, x) -> np.ndarray:
        """Modified binomial density over normalized HD values."""
        j = np.rint(self.L * np.asarray(x, dtype=float))
        return np.exp(binom_logpmf(j, self.L, self.p))


def fit_binomial(samples: Sequence[HdSample]) -> BinomialFit:
    samples = list(samples)
    if len(samples) < 10:
        raise ValueError(f"need at least 10 HD samples, got {len(samples)}")
    lengths = {s.L for s in samples}
    if len(lengths) != 1:
        raise ValueError(f"HD samples have mixed key lengths {sorted(lengths)}")
    x = np.array([s.x for s in samples])
    return BinomialFit(float(x.mean()), lengths.pop(), x.size, float(x.var()))


def binom_logpmf(j, L: int, p: float) -> np.ndarray:
    j = np.asarray(j, dtype=float)
    log_coef = gammaln(L + 1) - gammaln(j + 1) - gammaln(L - j + 1)
    return log_coef + xlogy(j, p) + xlog1py(L - j, -p)


def _log_tails(L: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Running log CDF and log upper tail (P(X >= j)) over j = 0..L.

    Accumulating with logaddexp keeps both monotone in j, which separate
    logsumexp calls do not guarantee at the last ulp.
    """
    lp = binom_logpmf(np.arange(L + 1), L, p)
    cdf = np.minimum(np.logaddexp.accumulate(lp), 0.0)
    upper = np.minimum(np.logaddexp.accumulate(lp[::-1])[::-1], 0.0)
    return cdf, upper


def binom_log_cdf(k: int, L: int, p: float) -> float:
    """log P(X <= k) for X ~ Binomial(L, p)."""
    if k < 0:
        return -math.inf
    if k >= L:
        return 0.0
    return float(_log_tails(L, p)[0][k])


def binom_log_sf(k: int, L: int, p: float) -> float:
    """log P(X > k), summed directly over the upper tail."""
    if k >= L:
        return -math.inf
    if k < 0:
        return 0.0
    return float(_log_tails(L, p)[1][k + 1])


@dataclass(frozen=True)
class DecisionRule:
    x_c: float
    L: int
    max_mismatch: int

    def __post_init__(self):
        if not 0 < self.x_c < 1:
            raise ValueError("x_c must lie in (0, 1)")
        if not 0 < self.max_mismatch < self.L:
            raise ValueError("max_mismatch must lie strictly between 0 and L")

    @classmethod
    def from_xc(cls, x_c: float, L: int) -> "DecisionRule":
        return cls(x_c, L, math.floor(x_c * L + _FLOOR_EPS))

    def accepts(self, mismatches: int) -> bool:
        return mismatches <= self.max_mismatch


def _p(fit) -> float:
    return fit.p if isinstance(fit, BinomialFit) else float(fit)


def crossing_point(p1: float, p2: float, L: int) -> float:
    """Real-valued mismatch count where the two binomial densities are equal."""
    if not 0 < p1 < p2 < 1:
        raise ValueError(f"need 0 < p1 < p2 < 1, got p1={p1}, p2={p2}")
    tail = math.log((1 - p1) / (1 - p2))
    return L * tail / (math.log(p2 / p1) + tail)


def intersect_xc(fit1, fit2, L: int) -> DecisionRule:
    """Decision rule at the crossing of the intra (p1) and inter (p2) densities."""
    p1, p2 = _p(fit1), _p(fit2)
    if p1 >= p2:
        raise ValueError(f"intra mean p1={p1} must be below inter mean p2={p2}")
    j_star = crossing_point(p1, p2, L)
    return DecisionRule(j_star / L, L, math.floor(j_star + _FLOOR_EPS))


def far_frr_at(max_mismatch: int, L: int, p1: float, p2: float) -> tuple[float, float]:
    """(FAR, FRR) for the rule 'accept iff mismatches <= max_mismatch'."""
    far = math.exp(binom_log_cdf(max_mismatch, L, p2))
    frr = math.exp(binom_log_sf(max_mismatch, L, p1))
    return far, frr


def log10_far_frr_at(max_mismatch: int, L: int, p1: float, p2: float) -> tuple[float, float]:
    ln10 = math.log(10)
    return binom_log_cdf(max_mismatch, L, p2) / ln10, binom_log_sf(max_mismatch, L, p1) / ln10


def far_frr(L: int, x_c: float, p1: float, p2: float) -> tuple[float, float]:
    """False accept and false reject rates with the threshold floor(L*x_c)."""
    for p in (p1, p2):
        if not 0 <= p <= 1:
            raise ValueError(f"probability out of range: {p}")
    return far_frr_at(math.floor(L * x_c + _FLOOR_EPS), L, p1, p2)

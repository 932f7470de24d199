"""A subset of the NIST SP 800-22 randomness tests.

Implemented: frequency, block frequency, runs, longest run of ones, cumulative
sums (forward and backward), serial (two P-values) and approximate entropy.
The remaining tests of the suite are listed in the report as not implemented.
Each function takes a 0/1 numpy array and returns a P-value (serial returns
two); sequences below a test's minimum length raise ``SequenceTooShort``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, gammaincc
from scipy.stats import norm

ALPHA = 0.01
UNIFORMITY_ALPHA = 0.0001

MIN_LENGTH = {
    "frequency": 100,
    "block_frequency": 100,
    "runs": 100,
    "longest_run": 128,
    "cusum_forward": 100,
    "cusum_backward": 100,
    "serial": 8,
    "approximate_entropy": 8,
}

NOT_IMPLEMENTED = (
    "binary_matrix_rank",
    "discrete_fourier_transform",
    "non_overlapping_template",
    "overlapping_template",
    "universal",
    "linear_complexity",
    "random_excursions",
    "random_excursions_variant",
)


class SequenceTooShort(ValueError):
    pass


def _check(bits, name: str) -> np.ndarray:
    e = np.asarray(bits, dtype=np.int8)
    if e.size < MIN_LENGTH[name]:
        raise SequenceTooShort(f"{name} needs at least {MIN_LENGTH[name]} bits, got {e.size}")
    return e


def frequency(bits) -> float:
    e = _check(bits, "frequency")
    s = abs(int(np.sum(2 * e.astype(np.int64) - 1)))
    return float(erfc(s / math.sqrt(e.size) / math.sqrt(2)))


def block_frequency(bits, M: int = 128) -> float:
    e = _check(bits, "block_frequency")
    M = min(M, e.size)
    n_blocks = e.size // M
    pi = e[: n_blocks * M].reshape(n_blocks, M).mean(axis=1)
    chi2 = 4.0 * M * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(n_blocks / 2.0, chi2 / 2.0))


def runs(bits) -> float:
    e = _check(bits, "runs")
    n = e.size
    pi = e.mean()
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0
    v = 1 + int(np.count_nonzero(e[1:] != e[:-1]))
    return float(erfc(abs(v - 2 * n * pi * (1 - pi)) / (2 * math.sqrt(2 * n) * pi * (1 - pi))))


# (block length M, class floor v_min, class probabilities) keyed by minimum n.
_LONGEST_RUN_TABLE = (
    (750000, 10000, 10, (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
    (6272, 128, 4, (0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124)),
    (128, 8, 1, (0.2148, 0.3672, 0.2305, 0.1875)),
)


def _longest_runs(blocks: np.ndarray) -> np.ndarray:
    best = np.zeros(blocks.shape[0], dtype=np.int64)
    cur = np.zeros(blocks.shape[0], dtype=np.int64)
    for col in blocks.T:
        cur = np.where(col == 1, cur + 1, 0)
        best = np.maximum(best, cur)
    return best


def longest_run(bits) -> float:
    e = _check(bits, "longest_run")
    for n_min, M, v_min, probs in _LONGEST_RUN_TABLE:
        if e.size >= n_min:
            break
    n_blocks = e.size // M
    longest = _longest_runs(e[: n_blocks * M].reshape(n_blocks, M))
    k = len(probs) - 1
    classes = np.clip(longest, v_min, v_min + k) - v_min
    nu = np.bincount(classes, minlength=k + 1)
    probs = np.asarray(probs)
    chi2 = float(np.sum((nu - n_blocks * probs) ** 2 / (n_blocks * probs)))
    return float(gammaincc(k / 2.0, chi2 / 2.0))


def cumulative_sums(bits, backward: bool = False) -> float:
    e = _check(bits, "cusum_backward" if backward else "cusum_forward")
    x = 2 * e.astype(np.int64) - 1
    if backward:
        x = x[::-1]
    n = x.size
    z = int(np.max(np.abs(np.cumsum(x))))
    sqn = math.sqrt(n)
    k1 = np.arange(int((-n / z + 1) / 4), int((n / z - 1) / 4) + 1)
    k2 = np.arange(int((-n / z - 3) / 4), int((n / z - 1) / 4) + 1)
    s1 = np.sum(norm.cdf((4 * k1 + 1) * z / sqn) - norm.cdf((4 * k1 - 1) * z / sqn))
    s2 = np.sum(norm.cdf((4 * k2 + 3) * z / sqn) - norm.cdf((4 * k2 + 1) * z / sqn))
    return float(min(1.0, max(0.0, 1.0 - s1 + s2)))


def _pattern_counts(e: np.ndarray, m: int) -> np.ndarray:
    """Counts of every overlapping m-bit pattern, wrapping around the end."""
    if m == 0:
        return np.array([e.size])
    ext = np.concatenate([e, e[: m - 1]]).astype(np.int64)
    codes = np.zeros(e.size, dtype=np.int64)
    for i in range(m):
        codes = (codes << 1) | ext[i : i + e.size]
    return np.bincount(codes, minlength=1 << m)


def default_serial_m(n: int) -> int:
    return int(min(16, max(2, math.floor(math.log2(n)) - 3)))


def default_apen_m(n: int) -> int:
    return int(min(10, max(1, math.floor(math.log2(n)) - 6)))


def serial(bits, m: int | None = None) -> tuple[float, float]:
    e = _check(bits, "serial")
    n = e.size
    m = default_serial_m(n) if m is None else m

    def psi2(k: int) -> float:
        if k <= 0:
            return 0.0
        nu = _pattern_counts(e, k)
        return float((1 << k) / n * np.sum(nu.astype(float) ** 2) - n)

    a, b, c = psi2(m), psi2(m - 1), psi2(m - 2)
    p1 = gammaincc(2 ** (m - 2), (a - b) / 2.0)
    p2 = gammaincc(2 ** (m - 3), (a - 2 * b + c) / 2.0)
    return float(p1), float(p2)


def approximate_entropy(bits, m: int | None = None) -> float:
    e = _check(bits, "approximate_entropy")
    n = e.size
    m = default_apen_m(n) if m is None else m

    def phi(k: int) -> float:
        c = _pattern_counts(e, k) / n
        c = c[c > 0]
        return float(np.sum(c * np.log(c)))

    apen = phi(m) - phi(m + 1)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return float(gammaincc(2 ** (m - 1), chi2 / 2.0))


# name -> callable returning a tuple of P-values
TESTS = {
    "frequency": lambda e: (frequency(e),),
    "block_frequency": lambda e: (block_frequency(e),),
    "runs": lambda e: (runs(e),),
    "longest_run": lambda e: (longest_run(e),),
    "cusum_forward": lambda e: (cumulative_sums(e),),
    "cusum_backward": lambda e: (cumulative_sums(e, backward=True),),
    "serial": serial,
    "approximate_entropy": lambda e: (approximate_entropy(e),),
}


def p_value_uniformity(pvalues) -> float:
    """Chi-square P-value of the P-value histogram over 10 equal bins."""
    p = np.asarray(pvalues, dtype=float)
    counts, _ = np.histogram(p, bins=10, range=(0.0, 1.0))
    expected = p.size / 10.0
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    return float(gammaincc(9 / 2.0, chi2 / 2.0))


@dataclass
class TestResult:
    name: str
    status: str  # "ok", "skipped" or "not implemented"
    pvalues: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    reason: str = ""

    @property
    def pass_rates(self) -> list[float]:
        """Fraction of blocks with P >= 0.01, one entry per P-value stream."""
        if self.status != "ok":
            return []
        return [float(np.mean(col >= ALPHA)) for col in self.pvalues.T]

    @property
    def uniformities(self) -> list[float]:
        if self.status != "ok":
            return []
        return [p_value_uniformity(col) for col in self.pvalues.T]

    @property
    def passed(self) -> bool | None:
        if self.status != "ok":
            return None
        return all(r >= 0.96 for r in self.pass_rates)


@dataclass
class BatteryReport:
    n_blocks: int
    block_length: int
    results: list[TestResult]

    def __getitem__(self, name: str) -> TestResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def rows(self) -> list[tuple[str, str, float | None, float | None]]:
        out = []
        for r in self.results:
            if r.status != "ok":
                out.append((r.name, r.status, None, None))
                continue
            streams = zip(r.pass_rates, r.uniformities)
            for i, (rate, unif) in enumerate(streams):
                label = r.name if r.pvalues.shape[1] == 1 else f"{r.name}_{i + 1}"
                out.append((label, r.status, rate, unif))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "status", "pass_rate", "uniformity"])
        for name, status, rate, unif in self.rows():
            w.writerow([name, status, "" if rate is None else f"{rate:.4f}", "" if unif is None else f"{unif:.4g}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{self.n_blocks} blocks of {self.block_length} bits", f"{'test':32s} {'uniformity':>10s} {'pass rate':>9s}"]
        for name, status, rate, unif in self.rows():
            if rate is None:
                lines.append(f"{name:32s} {status:>20s}")
            else:
                lines.append(f"{name:32s} {unif:10.4g} {100 * rate:8.2f}%")
        return "\n".join(lines) + "\n"


def randomness_battery(bits, block_length: int = 10000, n_blocks: int | None = None) -> BatteryReport:
    """Run every implemented test on consecutive blocks of ``bits``."""
    e = np.asarray(bits, dtype=np.int8)
    if e.ndim != 1:
        raise ValueError("bits must be a flat 0/1 sequence")
    if np.any((e != 0) & (e != 1)):
        raise ValueError("bits must be 0 or 1")
    available = e.size // block_length if block_length <= e.size else 0
    n_blocks = available if n_blocks is None else min(n_blocks, available)
    if n_blocks == 0:
        block_length, n_blocks = e.size, 1
    blocks = e[: n_blocks * block_length].reshape(n_blocks, block_length)
    results = []
    for name, fn in TESTS.items():
        if block_length < MIN_LENGTH[name]:
            results.append(
                TestResult(name, "skipped", reason=f"needs {MIN_LENGTH[name]} bits, blocks have {block_length}")
            )
            continue
        results.append(TestResult(name, "ok", np.array([fn(b) for b in blocks], dtype=float)))
    results.extend(TestResult(name, "not implemented") for name in NOT_IMPLEMENTED)
    return BatteryReport(n_blocks, block_length, results)

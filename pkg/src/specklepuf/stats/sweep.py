"""FAR/FRR reduction sweeps over key length, photon count and guard band."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .. import config
from ..ensembles import SimContext
from ..measurement import DetectorConfig
from .binomial import crossing_point, far_frr_at, log10_far_frr_at

AXES = ("L", "N_m", "delta")
COLUMNS = ("axis_value", "p1", "p2", "var1", "var2", "far", "frr")


@dataclass(frozen=True)
class SweepRow:
    axis_value: float
    p1: float
    p2: float
    var1: float
    var2: float
    far: float
    frr: float
    log10_far: float
    log10_frr: float
    max_mismatch: int


@dataclass
class SweepTable:
    axis: str
    rows: list[SweepRow]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([f"{getattr(r, c):.6g}" for c in COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{self.axis:>10s} {'p1':>9s} {'p2':>7s} {'var1':>9s} {'var2':>9s} {'FAR':>9s} {'FRR':>9s}"
        lines = [head]
        for r in self.rows:
            lines.append(
                f"{r.axis_value:10.4g} {r.p1:9.5f} {r.p2:7.4f} {r.var1:9.3g} {r.var2:9.3g} {r.far:9.3g} {r.frr:9.3g}"
            )
        return "\n".join(lines) + "\n"


def _row(axis_value: float, stats, L: int) -> SweepRow:
    p1 = stats.p1_floor
    if not p1 < stats.p2:
        nan = float("nan")
        return SweepRow(axis_value, stats.p1, stats.p2, stats.var1, stats.var2, nan, nan, nan, nan, -1)
    k = math.floor(crossing_point(p1, stats.p2, L) + 1e-9)
    far, frr = far_frr_at(k, L, p1, stats.p2)
    lfar, lfrr = log10_far_frr_at(k, L, p1, stats.p2)
    return SweepRow(axis_value, stats.p1, stats.p2, stats.var1, stats.var2, far, frr, lfar, lfrr, k)


def reduction_sweep(
    axis: str,
    grid,
    ctx: SimContext | None = None,
    cfg: DetectorConfig | None = None,
    L: int = config.KEY_LENGTH,
    delta_rel: float = 0.0,
    n_enrollments: int = 10,
    noise_seed: int = 0,
    balanced: bool = False,
) -> SweepTable:
    """Re-simulate intra and inter ensembles at each grid point.

    ``axis`` is ``"L"`` (key length), ``"N_m"`` (mean photon count, which sets
    the median N_m) or ``"delta"`` (guard band as a fraction of N_m).  The other
    two settings come from ``L``, ``cfg.mean_photon_target`` and ``delta_rel``.
    FAR/FRR use the crossing of the two fitted binomials; an intra mean of zero
    is replaced by half a pseudo-count.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    ctx = ctx or SimContext()
    cfg = cfg or DetectorConfig.calibrated()
    rows = []
    for value in grid:
        point_L, point_cfg, point_delta = L, cfg, delta_rel
        if axis == "L":
            point_L = int(value)
        elif axis == "N_m":
            point_cfg = replace(cfg, mean_photon_target=float(value))
        else:
            point_delta = float(value)
        stats = ctx.run(point_L, point_cfg, point_delta, noise_seed, balanced, n_enrollments)
        rows.append(_row(float(value), stats, point_L))
    return SweepTable(axis, rows)


def loglinear_r2(x, y) -> float:
    """R^2 of a straight-line fit of log10(y) against x."""
    x = np.asarray(x, dtype=float)
    ly = np.log10(np.asarray(y, dtype=float))
    coef = np.polyfit(x, ly, 1)
    resid = ly - np.polyval(coef, x)
    return 1.0 - float(np.sum(resid**2) / np.sum((ly - ly.mean()) ** 2))


@dataclass(frozen=True)
class HingeFit:
    breakpoint: float
    slope_left: float
    slope_right: float
    sse: float
    sse_line: float

    @property
    def relative_change(self) -> float:
        return abs(self.slope_right - self.slope_left) / max(abs(self.slope_left), abs(self.slope_right))

    @property
    def flattens(self) -> bool:
        return abs(self.slope_right) < abs(self.slope_left)


def hinge_fit(x, y, min_points: int = 3) -> HingeFit:
    """Best continuous two-segment line through (x, y), breakpoint at a data x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    line = np.polyfit(x, y, 1)
    sse_line = float(np.sum((y - np.polyval(line, x)) ** 2))
    best = None
    for b in x[min_points - 1 : len(x) - min_points + 1]:
        design = np.column_stack([np.ones_like(x), np.minimum(x - b, 0.0), np.maximum(x - b, 0.0)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        sse = float(np.sum((y - design @ coef) ** 2))
        if best is None or sse < best.sse:
            best = HingeFit(float(b), float(coef[1]), float(coef[2]), sse, sse_line)
    if best is None:
        raise ValueError("not enough points for a two-segment fit")
    return best

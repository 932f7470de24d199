import numpy as np
import pytest

from specklepuf._rng import as_rng, make_rng
from specklepuf.ensembles import SimContext, balanced_selection
from specklepuf.keygen import StreamExhaustedError
from specklepuf.measurement import DetectorConfig
from specklepuf.stats.sweep import COLUMNS, hinge_fit, loglinear_r2, reduction_sweep


def test_rng_streams():
    a = make_rng(5, "x").integers(0, 2**32, 4)
    assert np.array_equal(a, make_rng(5, "x").integers(0, 2**32, 4))
    assert not np.array_equal(a, make_rng(5, "y").integers(0, 2**32, 4))
    assert not np.array_equal(a, make_rng(6, "x").integers(0, 2**32, 4))
    g = np.random.default_rng(1)
    assert as_rng(g) is g
    with pytest.raises(ValueError):
        make_rng(-1)
    with pytest.raises(ValueError):
        make_rng(2**64)


def test_loglinear_r2_exact_exponential():
    x = np.arange(50, 401, 50)
    assert loglinear_r2(x, 10.0 ** (-0.1 * x)) == pytest.approx(1.0)


def test_hinge_fit_recovers_knee():
    x = np.linspace(0, 0.08, 17)
    y = np.where(x < 0.03, -200 * x, -6 - 30 * (x - 0.03))
    fit = hinge_fit(x, y)
    assert fit.breakpoint == pytest.approx(0.03)
    assert fit.slope_left == pytest.approx(-200) and fit.slope_right == pytest.approx(-30)
    assert fit.flattens and fit.relative_change == pytest.approx(0.85)
    with pytest.raises(ValueError):
        hinge_fit(x[:4], y[:4])


def test_balanced_selection():
    bits = np.array([1, 1, 1, 0, 1, 0, 0, 1])
    kept = np.array([True, True, False, True, True, True, True, True])
    assert balanced_selection(bits, kept, 4).tolist() == [0, 1, 3, 5]
    assert balanced_selection(bits, kept, 10).size == 0


@pytest.fixture(scope="module")
def ctx():
    return SimContext(seed=1, m=200, S=40, pool_size=1200, n_impostors=8, n_copies=20)


def test_sweep_table_layout(ctx):
    table = reduction_sweep("L", [20, 40], ctx, DetectorConfig.calibrated(), n_enrollments=2)
    assert table.to_csv().splitlines()[0] == ",".join(COLUMNS)
    assert len(table.rows) == 2
    assert np.all(table.column("p1") < table.column("p2"))
    assert "FAR" in table.to_text()
    with pytest.raises(ValueError):
        reduction_sweep("bogus", [1], ctx)


def test_sweep_deterministic(ctx):
    a = reduction_sweep("delta", [0.0, 0.04], ctx, DetectorConfig.shot_noise_only(), L=30, n_enrollments=2)
    b = reduction_sweep("delta", [0.0, 0.04], ctx, DetectorConfig.shot_noise_only(), L=30, n_enrollments=2)
    assert a.to_csv() == b.to_csv()


def test_more_photons_fewer_flips(ctx):
    cfg = DetectorConfig.shot_noise_only()
    t = reduction_sweep("N_m", [2429, 9 * 2429], ctx, cfg, L=60, n_enrollments=4)
    p1 = t.column("p1")
    assert p1[1] < p1[0]


def test_guard_band_lowers_intra(ctx):
    t = reduction_sweep("delta", [0.0, 0.05], ctx, DetectorConfig.shot_noise_only(), L=40, n_enrollments=4)
    p1 = t.column("p1")
    assert p1[1] < p1[0]


def test_pool_exhaustion_reported(ctx):
    with pytest.raises(StreamExhaustedError):
        ctx.run(1000, DetectorConfig.calibrated(), 0.4)

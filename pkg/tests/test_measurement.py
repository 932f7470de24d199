import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oracles import loop_intensity
from specklepuf._rng import make_rng
from specklepuf.challenge import Challenge, generate_challenge, generate_challenges
from specklepuf.measurement import (
    DegenerateFitError,
    DetectorConfig,
    ensemble_mean_intensity,
    fit_gamma,
    gamma_count_pmf,
    measure_counts,
    noiseless_intensities,
    raw_intensities,
    read_responses_csv,
    respond,
    respond_batch,
    write_responses_csv,
)
from specklepuf.puf import synthesize_puf


@pytest.mark.parametrize("suppress", [True, False])
def test_intensity_matches_loop_oracle(suppress):
    puf = synthesize_puf(3, 12, 4)
    chals = generate_challenges(make_rng(1), 12, 5)
    got = raw_intensities(puf, np.stack([c.bits for c in chals]), suppress)
    for g, c in zip(got, chals):
        assert g == pytest.approx(loop_intensity(puf.amplitude, puf.phase, list(c.bits), suppress), rel=1e-10)


@pytest.mark.parametrize("suppress", [True, False])
def test_ensemble_mean_closed_form(suppress):
    # average over every balanced challenge of m=8 (70 of them)
    from itertools import combinations

    puf = synthesize_puf(6, 8, 3)
    pats = []
    for on in combinations(range(8), 4):
        r = np.zeros(8, dtype=np.uint8)
        r[list(on)] = 1
        pats.append(r)
    exact = raw_intensities(puf, np.array(pats), suppress).mean()
    assert ensemble_mean_intensity(puf, suppress) == pytest.approx(exact, rel=1e-12)


def test_mean_count_matches_target():
    puf = synthesize_puf(1, 1200, 302)
    n = measure_counts(puf, generate_challenges(make_rng(2), 1200, 10**4), DetectorConfig.noiseless(), 0)
    assert 2380 <= n.mean() <= 2478


def test_all_zero_pattern_gives_dark_counts_only():
    puf = synthesize_puf(1, 20, 5)
    zero = Challenge(np.zeros(20, dtype=np.uint8))
    cfg = DetectorConfig(100.0, shot_noise=True, dark_rate=3.0, intensity_jitter_rel=0.0, suppress_background=False)
    s = respond(puf, zero, cfg, 0, allow_unbalanced=True)
    assert s.noiseless_intensity == 0.0
    counts = [respond(puf, zero, cfg, i, allow_unbalanced=True).photon_count for i in range(2000)]
    assert np.mean(counts) == pytest.approx(3.0, rel=0.08)
    with pytest.raises(ValueError, match="balanced"):
        respond(puf, zero, cfg, 0)


def test_single_cell_is_exponential():
    puf = synthesize_puf(4, 1200, 1)
    i = noiseless_intensities(puf, generate_challenges(make_rng(3), 1200, 10**4), DetectorConfig.noiseless(1.0))
    assert stats.kstest(i / i.mean(), "expon").pvalue > 0.01
    fit = fit_gamma(measure_counts(puf, generate_challenges(make_rng(3), 1200, 10**4), DetectorConfig.noiseless(), 0))
    assert fit.shape == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("S", [1, 10, 100, 302])
def test_shape_law(S):
    puf = synthesize_puf(10 + S, 1200, S)
    counts = measure_counts(puf, generate_challenges(make_rng(S), 1200, 10**4), DetectorConfig.noiseless(), 0)
    assert fit_gamma(counts).shape == pytest.approx(S, rel=0.10)


def test_fit_needs_spread_and_size():
    with pytest.raises(ValueError):
        fit_gamma(np.full(50, 10.0))
    with pytest.raises(DegenerateFitError):
        fit_gamma(np.full(200, 2429))
    nearly = 2429 + make_rng(1).normal(0, 0.5, 500)
    fit = fit_gamma(nearly)
    assert fit.narrow and fit.shape > 1e4


def test_gamma_pmf_against_scipy():
    N = np.arange(1500, 3400, 37)
    ours = gamma_count_pmf(N, 2429, 301.8)
    ref = stats.gamma(a=301.8, scale=2429 / 301.8).pdf(N)
    assert np.allclose(ours, ref, rtol=1e-10)
    peak = gamma_count_pmf(2429, 2429, 301.8)
    assert np.isfinite(peak) and peak > 0
    assert peak >= gamma_count_pmf(2929, 2429, 301.8) and peak >= gamma_count_pmf(1929, 2429, 301.8)
    assert gamma_count_pmf(np.arange(0, 10 * 2429 + 1), 2429, 301.8).sum() == pytest.approx(1.0, abs=1e-3)
    N = np.arange(0, 50)
    assert np.allclose(gamma_count_pmf(N, 7.0, 1.0), np.exp(-N / 7.0) / 7.0, rtol=1e-12)
    for bad in ((0, 1), (5, 0), (-1, 2)):
        with pytest.raises(ValueError):
            gamma_count_pmf(10, *bad)


def test_amplitude_scaling_leaves_counts_unchanged():
    puf = synthesize_puf(2, 1200, 302)
    chals = generate_challenges(make_rng(7), 1200, 300)
    base = measure_counts(puf, chals, DetectorConfig.noiseless(), 0)
    for lam in (0.5, 3.0, 10.0):
        scaled = measure_counts(puf.scaled(lam), chals, DetectorConfig.noiseless(), 0)
        assert np.max(np.abs(scaled - base)) <= 1


def test_determinism_and_order_stability(tmp_path):
    puf = synthesize_puf(2, 100, 7)
    chals = generate_challenges(make_rng(8), 100, 20)
    cfg = DetectorConfig.shot_noise_only()
    a = respond_batch(puf, chals, cfg, 5)
    b = respond_batch(puf, chals, cfg, 5)
    assert [s.photon_count for s in a] == [s.photon_count for s in b]
    assert [s.challenge_id for s in a] == [c.challenge_id for c in chals]
    path = tmp_path / "r.csv"
    write_responses_csv(a, path)
    assert path.read_bytes().startswith(b"challenge_id,N\n")
    assert b"\r" not in path.read_bytes()
    assert read_responses_csv(path) == [(s.challenge_id, s.photon_count) for s in a]


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        respond(synthesize_puf(1, 10, 2), generate_challenge(0, 12), DetectorConfig.noiseless(), 0)


def test_config_validation():
    for kw in ({"mean_photon_target": 0}, {"dark_rate": -1}, {"intensity_jitter_rel": -0.1}):
        with pytest.raises(ValueError):
            dataclasses.replace(DetectorConfig(), **kw)


def test_shot_noise_variance():
    # Poisson on top of a fixed intensity: variance equals the mean
    cfg = DetectorConfig(2429.0, shot_noise=True, dark_rate=0.0, intensity_jitter_rel=0.0)
    counts = measure_counts(synthesize_puf(1, 40, 5), [generate_challenge(1, 40)] * 20000, cfg, 3)
    assert counts.var() == pytest.approx(counts.mean(), rel=0.05)


@given(scale=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_counts_non_negative(scale, seed):
    cfg = DetectorConfig(scale, shot_noise=True, intensity_jitter_rel=0.5)
    counts = measure_counts(synthesize_puf(seed, 10, 2), generate_challenges(seed, 10, 30), cfg, seed)
    assert counts.dtype.kind == "i" and np.all(counts >= 0)

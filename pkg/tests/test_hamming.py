import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from specklepuf._rng import make_rng
from specklepuf.challenge import generate_challenges
from specklepuf.ensembles import (
    inter_keys_same_challenge,
    inter_keys_same_puf,
    inter_puf_bits,
    keys_from_counts,
    remeasured_keys,
)
from specklepuf.measurement import DetectorConfig
from specklepuf.puf import synthesize_puf
from specklepuf.stats.binomial import fit_binomial
from specklepuf.stats.hamming import HdKind, HdSample, hamming_normalized, hd_ensemble, pairwise_mismatches

keys_st = st.integers(1, 64).flatmap(
    lambda L: st.lists(st.lists(st.integers(0, 1), min_size=L, max_size=L), min_size=2, max_size=8)
)


def test_examples():
    a = np.zeros(150, dtype=np.uint8)
    assert hamming_normalized(a, a) == 0
    assert hamming_normalized(a, 1 - a) == 1
    b = a.copy()
    b[:33] = 1
    assert hamming_normalized(a, b) == pytest.approx(0.22)
    with pytest.raises(ValueError):
        hamming_normalized(a, a[:10])


@given(keys_st)
def test_pairwise_matches_direct(keys):
    keys = [np.array(k, dtype=np.uint8) for k in keys]
    direct = [int(np.sum(keys[i] != keys[j])) for i in range(len(keys)) for j in range(i + 1, len(keys))]
    assert pairwise_mismatches(keys).tolist() == direct
    ens = hd_ensemble(keys, "intra")
    assert ens.mean == pytest.approx(np.mean(direct) / keys[0].size)
    assert all(s.kind is HdKind.INTRA for s in ens.samples)


def test_ensemble_errors():
    with pytest.raises(ValueError):
        hd_ensemble([np.zeros(4)], HdKind.INTRA)
    with pytest.raises(ValueError):
        hd_ensemble([np.zeros(4), np.zeros(5)], HdKind.INTRA)
    with pytest.raises(ValueError):
        HdSample(0.35, 10, HdKind.INTRA)
    with pytest.raises(ValueError):
        HdSample(1.5, 2, HdKind.INTRA)


def test_inter_same_challenge_ensemble():
    cfg = DetectorConfig.calibrated()
    pufs = [synthesize_puf(100 + i, 1200, 302) for i in range(50)]
    keys = inter_keys_same_challenge(pufs, generate_challenges(make_rng(1), 1200, 150), cfg, 1)
    ens = hd_ensemble(keys, HdKind.INTER_SAME_CHALLENGE)
    assert ens.mean == pytest.approx(0.496, abs=0.01)
    assert ens.variance == pytest.approx(1.67e-3, rel=0.3)
    fit = fit_binomial(ens.samples)
    assert fit.independent()


def test_intra_mean_over_keys_matches_calibration():
    cfg = DetectorConfig.calibrated()
    means = []
    for s in range(10):
        puf = synthesize_puf(200 + s, 1200, 302)
        ens = hd_ensemble(remeasured_keys(puf, generate_challenges(make_rng(s, "intra"), 1200, 150), cfg, 50, s), "intra")
        means.append(ens.mean)
    assert np.mean(means) == pytest.approx(0.056, abs=0.01)


def test_inter_kinds_share_distribution():
    cfg = DetectorConfig.calibrated()
    pufs = [synthesize_puf(300 + i, 1200, 302) for i in range(200)]
    k1 = inter_keys_same_challenge(pufs, generate_challenges(make_rng(2), 1200, 150), cfg, 2)
    k2 = inter_keys_same_puf(synthesize_puf(299, 1200, 302), 200, 150, cfg, 3)
    # disjoint pairs keep the samples independent
    x1 = [hamming_normalized(k1[i], k1[i + 1]) for i in range(0, 200, 2)]
    x2 = [hamming_normalized(k2[i], k2[i + 1]) for i in range(0, 200, 2)]
    assert stats.ttest_ind(x1, x2, equal_var=False).pvalue > 0.01


def test_variance_identity_at_1000_keys():
    cfg = DetectorConfig.calibrated()
    keys = inter_keys_same_puf(synthesize_puf(7, 1200, 302), 1000, 50, cfg, 4)
    x = np.array([hamming_normalized(keys[i], keys[i + 1]) for i in range(0, 1000, 2)])
    p = x.mean()
    assert x.var() == pytest.approx(p * (1 - p) / 50, rel=0.3)


def test_keys_from_counts_row_medians():
    counts = np.array([[1, 5, 3, 9], [10, 2, 2, 2]])
    assert keys_from_counts(counts).tolist() == [[0, 1, 0, 1], [1, 0, 0, 0]]


def test_inter_puf_bits_blocks_balanced():
    bits = inter_puf_bits(3, 200, DetectorConfig.calibrated(), 5, m=100, S=30)
    assert bits.size == 600
    for block in bits.reshape(3, 200):
        assert abs(int(block.sum()) - 100) <= 1

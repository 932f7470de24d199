import shutil

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from specklepuf._rng import make_rng
from specklepuf.challenge import challenge_stream, generate_challenges
from specklepuf.measurement import DetectorConfig, apply_noise, measure_counts, noiseless_intensities
from specklepuf.protocol import (
    AuthSession,
    CrpDatabase,
    CrpRecord,
    DatabaseExhaustedError,
    DuplicateChallengeError,
    SessionStateError,
    abort_session,
    enroll,
    hex_challenge_id,
    open_session,
    verify,
)
from specklepuf.puf import synthesize_puf
from specklepuf.stats.binomial import DecisionRule, intersect_xc

M = 200
RULE = intersect_xc(0.056, 0.496, 150)


def _measure(puf, cfg=None, seed=0):
    cfg = cfg or DetectorConfig.calibrated()
    rng = make_rng(seed, "test-measure")
    return lambda ch: measure_counts(puf, ch, cfg, rng)


@pytest.fixture(scope="module")
def small_puf():
    return synthesize_puf(1, M, 40)


def _db(puf, n, path=None, seed=1):
    db = CrpDatabase.create(path, puf.segment_count) if path else None
    return enroll(_measure(puf), challenge_stream(seed, puf.segment_count), n, db=db, m=puf.segment_count)


def test_enroll_median_split(small_puf):
    db = _db(small_puf, 10000)
    assert len(db) == 10000 and db.unconsumed_count == 10000
    ones = np.mean([r.response_bit for r in db])
    assert ones == pytest.approx(0.5, abs=0.02)


def test_enroll_single_challenge(small_puf):
    db = _db(small_puf, 1)
    (rec,) = list(db)
    assert rec.response_bit == 0


def test_enroll_guard_band_fraction():
    puf = synthesize_puf(2, 1200, 302)
    db = enroll(_measure(puf, DetectorConfig.noiseless()), challenge_stream(3, 1200), 10000, delta_rel=0.05, m=1200)
    law = stats.gamma(a=301.8, scale=2429 / 301.8)
    med = law.median()
    q = law.cdf(1.05 * med) - law.cdf(0.95 * med)
    assert len(db) == pytest.approx(10000 * (1 - q), rel=0.03)


def test_enroll_is_atomic(small_puf, tmp_path):
    path = tmp_path / "crp.db"
    db = _db(small_puf, 100, path)
    before = path.read_bytes()

    def broken(ch):
        raise RuntimeError("detector unplugged")

    with pytest.raises(RuntimeError):
        enroll(broken, challenge_stream(9, M), 50, db=db)
    assert len(db) == 100 and path.read_bytes() == before
    with pytest.raises(DuplicateChallengeError):
        enroll(_measure(small_puf), challenge_stream(1, M), 10, db=db)
    assert len(db) == 100 and path.read_bytes() == before
    with pytest.raises(ValueError):
        enroll(_measure(small_puf), challenge_stream(1, M), 0)


def test_file_format(small_puf, tmp_path):
    path = tmp_path / "crp.db"
    _db(small_puf, 5, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"SPUF-CRPDB 1 m={M}"
    assert len(lines) == 6
    cid, chex, bit, consumed, stamp = lines[1].split(" ")
    assert cid == hex_challenge_id(chex) and bit in "01" and consumed == "0"
    assert stamp.endswith("+00:00")
    assert CrpRecord.from_line(lines[1] + "\n").to_line() == lines[1] + "\n"


def test_record_validation():
    c = generate_challenges(0, 8, 1)[0]
    with pytest.raises(ValueError):
        CrpRecord("0" * 16, c.hex, 1)
    with pytest.raises(ValueError):
        CrpRecord(c.challenge_id, c.hex, 2)


def test_session_uses_all_then_exhausts(small_puf):
    db = _db(small_puf, 150)
    s = open_session(db, 150, 1)
    assert sorted(s.challenge_ids) == sorted(r.challenge_id for r in db)
    assert db.unconsumed_count == 0
    with pytest.raises(DatabaseExhaustedError, match="short by 150"):
        open_session(db, 150, 2)


def test_short_database_left_unchanged(small_puf, tmp_path):
    path = tmp_path / "crp.db"
    db = _db(small_puf, 149, path)
    with pytest.raises(DatabaseExhaustedError, match="short by 1"):
        open_session(db, 150, 1)
    assert db.unconsumed_count == 149
    assert not db.journal_path.exists()
    assert CrpDatabase.open(path).unconsumed_count == 149


def test_sequential_sessions_disjoint(small_puf):
    db = _db(small_puf, 1000)
    a = open_session(db, 150, 1)
    b = open_session(db, 150, 1)
    assert not set(a.challenge_ids) & set(b.challenge_ids)
    assert all(db[c].consumed for c in a.challenge_ids + b.challenge_ids)


def test_session_order_randomized(small_puf):
    db = _db(small_puf, 2000)
    orders = [open_session(db, 150, s).challenge_ids for s in range(3)]
    insertion = {cid: i for i, cid in enumerate(r.challenge_id for r in db)}
    for ids in orders:
        pos = [insertion[c] for c in ids]
        assert pos != sorted(pos)


def test_verify_examples(small_puf):
    db = _db(small_puf, 3000)
    # the verifier thresholds at the median, so K0 is reproducible only with <= L/2 ones
    s = next(s for s in (open_session(db, 150, i) for i in range(20)) if s.expected_key.sum() <= 75)
    replay = [10 + 5 * b for b in s.expected_key]
    verify(s, replay, RULE)
    assert s.verdict == "accept" and s.measured_hd == 0.0
    with pytest.raises(SessionStateError):
        verify(s, replay, RULE)
    s2 = open_session(db, 150, 4)
    with pytest.raises(ValueError):
        verify(s2, replay[:10], RULE)
    with pytest.raises(ValueError):
        verify(s2, replay, DecisionRule.from_xc(0.22, 100))
    abort_session(s2)
    assert s2.verdict == "reject"


def test_genuine_and_impostor_rates():
    puf = synthesize_puf(5, 1200, 302)
    cfg = DetectorConfig.calibrated()
    db = enroll(_measure(puf, cfg, 1), challenge_stream(6, 1200), 3000, m=1200)
    records = list(db)
    chals = generate_challenges(6, 1200, 3000)  # same stream as enrollment
    assert [c.challenge_id for c in chals] == [r.challenge_id for r in records]
    clean = noiseless_intensities(puf, chals, cfg)
    bits = np.array([r.response_bit for r in records])
    rng = make_rng(7)
    rejects = 0
    for _ in range(10**4):
        idx = rng.choice(3000, 150, replace=False)
        session = AuthSession("t", [records[i].challenge_id for i in idx], [], bits[idx])
        verify(session, apply_noise(clean[idx], cfg, rng), RULE)
        rejects += session.verdict == "reject"
    assert rejects == 0
    impostor = noiseless_intensities(synthesize_puf(77, 1200, 302), chals, cfg)
    hds = []
    for _ in range(200):
        idx = rng.choice(3000, 150, replace=False)
        session = AuthSession("i", [records[i].challenge_id for i in idx], [], bits[idx])
        verify(session, apply_noise(impostor[idx], cfg, rng), RULE)
        assert session.verdict == "reject"
        hds.append(session.measured_hd)
    assert np.mean(hds) == pytest.approx(0.496, abs=0.02)


@given(st.lists(st.integers(0, 400), min_size=150, max_size=150), st.integers(1, 149))
def test_verdict_is_exact_popcount_rule(counts, k):
    key = np.array([i % 2 for i in range(150)], dtype=np.uint8)
    s = AuthSession("h", [f"{i:016x}" for i in range(150)], [], key)
    rule = DecisionRule(k / 150, 150, k)
    verify(s, counts, rule)
    med = np.median(counts)
    mism = int(np.sum((np.array(counts) > med).astype(np.uint8) != key))
    assert s.mismatches == mism
    assert (s.verdict == "accept") == (mism <= k)


def test_consumption_survives_crash(small_puf, tmp_path):
    path = tmp_path / "crp.db"
    db = _db(small_puf, 500, path)
    s = open_session(db, 150, 1)
    del db  # crash: no compaction ran
    assert path.with_name("crp.db.journal").exists()
    again = CrpDatabase.open(path)
    assert all(again[c].consumed for c in s.challenge_ids)
    assert again.unconsumed_count == 350
    again.compact()
    assert not again.journal_path.exists()
    assert CrpDatabase.open(path).unconsumed_count == 350


def test_torn_journal_line_ignored(small_puf, tmp_path):
    path = tmp_path / "crp.db"
    db = _db(small_puf, 50, path)
    open_session(db, 10, 1)
    with open(db.journal_path, "a") as fh:
        fh.write("CONSUME 12ab")  # crash mid-append, never fsynced
    assert CrpDatabase.open(path).unconsumed_count == 40


@settings(max_examples=15)
@given(st.lists(st.tuples(st.integers(1, 60), st.booleans(), st.booleans()), min_size=1, max_size=12))
def test_one_time_pad_over_random_schedules(schedule):
    import tempfile
    from pathlib import Path

    puf = synthesize_puf(3, 20, 4)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "crp.db"
        db = enroll(_measure(puf), challenge_stream(2, 20), 300, db=CrpDatabase.create(path, 20))
        issued: list[str] = []
        snapshot = None
        for step, (L, reopen, crash_copy) in enumerate(schedule):
            try:
                s = open_session(db, L, step)
            except DatabaseExhaustedError:
                continue
            issued.extend(s.challenge_ids)
            if crash_copy:
                # copy the files as a crash would leave them, then recover from the copy
                snapshot = Path(tmp) / f"crash{step}"
                snapshot.mkdir()
                shutil.copy(path, snapshot / "crp.db")
                if db.journal_path.exists():
                    shutil.copy(db.journal_path, snapshot / "crp.db.journal")
                db = CrpDatabase.open(snapshot / "crp.db")
                path = snapshot / "crp.db"
            elif reopen:
                db = CrpDatabase.open(path)
        assert len(issued) == len(set(issued))
        assert all(CrpDatabase.open(path)[c].consumed for c in issued)
        assert CrpDatabase.open(path).unconsumed_count == 300 - len(issued)


def test_compaction_threshold(small_puf, tmp_path, monkeypatch):
    path = tmp_path / "crp.db"
    db = _db(small_puf, 30000, path)
    for i in range(70):
        open_session(db, 150, i)
    # 10500 journal lines exceed max(10000, n/4): folded into the main file
    assert not db.journal_path.exists() or db._journal_lines < 10000
    assert CrpDatabase.open(path).unconsumed_count == 30000 - 70 * 150

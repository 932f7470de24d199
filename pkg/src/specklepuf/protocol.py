"""Enrollment and verification over a one-time-pad CRP database.

Database file (UTF-8, one record per line)::

    SPUF-CRPDB 1 m=<m>
    <challenge_id> <challenge_hex> <bit> <consumed:0|1> <iso8601>

Full rewrites go through a temp file and ``os.replace``.  Consumption is first
appended to ``<path>.journal`` (one ``CONSUME <challenge_id>`` per line,
fsynced) so issuing a session costs one small write; the journal is folded into
the main file by :meth:`CrpDatabase.compact`, and replayed on open if a crash
left it behind.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import os
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._rng import as_rng
from .challenge import Challenge, decode_challenge
from .keygen import session_bits
from .stats.binomial import DecisionRule

HEADER_PREFIX = "SPUF-CRPDB 1 m="


class DatabaseExhaustedError(RuntimeError):
    pass


class DuplicateChallengeError(ValueError):
    pass


class SessionStateError(RuntimeError):
    pass


def _now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc).replace(microsecond=0)


def hex_challenge_id(challenge_hex: str) -> str:
    return hashlib.sha256(bytes.fromhex(challenge_hex)).hexdigest()[:16]


@dataclass
class CrpRecord:
    challenge_id: str
    challenge_hex: str
    response_bit: int
    consumed: bool = False
    enrolled_at: dt.datetime = field(default_factory=_now)

    def __post_init__(self):
        if self.response_bit not in (0, 1):
            raise ValueError("response bit must be 0 or 1")
        if hex_challenge_id(self.challenge_hex) != self.challenge_id:
            raise ValueError(f"challenge id {self.challenge_id} does not hash its challenge")

    def to_line(self) -> str:
        return (
            f"{self.challenge_id} {self.challenge_hex} {self.response_bit} "
            f"{int(self.consumed)} {self.enrolled_at.isoformat()}\n"
        )

    @classmethod
    def from_line(cls, line: str) -> "CrpRecord":
        cid, chex, bit, consumed, stamp = line.split()
        if consumed not in ("0", "1"):
            raise ValueError(f"bad consumed flag {consumed!r}")
        return cls(cid, chex, int(bit), consumed == "1", dt.datetime.fromisoformat(stamp))


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def _atomic_write(path: Path, lines: Iterable[str]) -> None:
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    _fsync_dir(path.parent)


class CrpDatabase:
    """Challenge-response pairs with consume-on-issue semantics.

    All mutations hold one lock, so a single process has a single writer.
    Without a ``path`` the database lives in memory only.
    """

    def __init__(self, m: int, records: Iterable[CrpRecord] = (), path: str | Path | None = None):
        self.m = m
        self.path = Path(path) if path is not None else None
        self._lock = threading.RLock()
        self._records: dict[str, CrpRecord] = {}
        self._free: list[str] = []
        self._free_pos: dict[str, int] = {}
        self._journal_lines = 0
        for rec in records:
            self._insert(rec)

    # -- persistence ---------------------------------------------------------

    @property
    def journal_path(self) -> Path | None:
        return None if self.path is None else self.path.with_name(self.path.name + ".journal")

    @classmethod
    def open(cls, path: str | Path) -> "CrpDatabase":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if not header.startswith(HEADER_PREFIX):
                raise ValueError(f"{path}: not a CRP database (header {header!r})")
            m = int(header[len(HEADER_PREFIX) :])
            db = cls(m, (CrpRecord.from_line(line) for line in fh if line.strip()), path)
        journal = db.journal_path
        if journal.exists():
            for line in journal.read_text(encoding="utf-8").splitlines():
                verb, _, cid = line.partition(" ")
                # a torn final line from a crash is ignored; its fsync never returned
                if verb == "CONSUME" and cid in db._records:
                    db._mark_consumed(cid)
                    db._journal_lines += 1
        return db

    @classmethod
    def create(cls, path: str | Path, m: int) -> "CrpDatabase":
        db = cls(m, (), path)
        db.save()
        return db

    def save(self) -> None:
        """Rewrite the whole file atomically and drop the journal."""
        if self.path is None:
            return
        with self._lock:
            header = f"{HEADER_PREFIX}{self.m}\n"
            _atomic_write(self.path, [header, *(r.to_line() for r in self._records.values())])
            if self.journal_path.exists():
                self.journal_path.unlink()
            self._journal_lines = 0

    compact = save

    # -- record bookkeeping --------------------------------------------------

    def _insert(self, rec: CrpRecord) -> None:
        if rec.challenge_id in self._records:
            raise DuplicateChallengeError(f"challenge {rec.challenge_id} already enrolled")
        if len(rec.challenge_hex) != 2 * ((self.m + 7) // 8):
            raise ValueError(f"challenge hex length does not match m={self.m}")
        self._records[rec.challenge_id] = rec
        if not rec.consumed:
            self._free_pos[rec.challenge_id] = len(self._free)
            self._free.append(rec.challenge_id)

    def _mark_consumed(self, cid: str) -> None:
        rec = self._records[cid]
        if rec.consumed:
            return
        rec.consumed = True
        pos = self._free_pos.pop(cid)
        last = self._free.pop()
        if last != cid:
            self._free[pos] = last
            self._free_pos[last] = pos

    def add_records(self, records: Sequence[CrpRecord]) -> None:
        """Append records all-or-nothing, then persist."""
        with self._lock:
            seen = set()
            for rec in records:
                if rec.challenge_id in self._records or rec.challenge_id in seen:
                    raise DuplicateChallengeError(f"challenge {rec.challenge_id} already enrolled")
                seen.add(rec.challenge_id)
            for rec in records:
                self._insert(rec)
            self.save()

    def consume(self, challenge_ids: Sequence[str]) -> None:
        """Burn records durably before their challenges are released."""
        with self._lock:
            for cid in challenge_ids:
                if cid not in self._records:
                    raise KeyError(cid)
                if self._records[cid].consumed:
                    raise SessionStateError(f"challenge {cid} was already consumed")
            if self.path is not None:
                with open(self.journal_path, "a", encoding="utf-8") as fh:
                    fh.write("".join(f"CONSUME {cid}\n" for cid in challenge_ids))
                    fh.flush()
                    os.fsync(fh.fileno())
                self._journal_lines += len(challenge_ids)
            for cid in challenge_ids:
                self._mark_consumed(cid)
            if self.path is not None and self._journal_lines > max(10000, len(self._records) // 4):
                self.save()

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, cid: str) -> CrpRecord:
        return self._records[cid]

    def __iter__(self):
        return iter(list(self._records.values()))

    @property
    def unconsumed_count(self) -> int:
        return len(self._free)

    def unconsumed_ids(self) -> list[str]:
        return list(self._free)

    def sample_unconsumed(self, L: int, seed_or_rng=None) -> list[str]:
        with self._lock:
            if L > len(self._free):
                raise DatabaseExhaustedError(
                    f"database exhausted: {len(self._free)} unconsumed records, session needs {L} "
                    f"(short by {L - len(self._free)})"
                )
            rng = as_rng(seed_or_rng, "session")
            return [self._free[i] for i in rng.choice(len(self._free), size=L, replace=False)]


# -- enrollment ----------------------------------------------------------------

MeasureFn = Callable[[Sequence[Challenge]], Sequence[int]]


def enroll(
    measure: MeasureFn,
    source: Iterable[Challenge],
    count: int,
    delta_rel: float = 0.0,
    db: CrpDatabase | None = None,
    m: int | None = None,
) -> CrpDatabase:
    """Measure ``count`` challenges, threshold at the session median, store kept pairs.

    ``delta_rel`` is the guard band as a fraction of the session median.  The
    oracle is called once on the whole batch; if it raises, nothing is written.
    """
    if count < 1:
        raise ValueError("enrollment needs at least one challenge")
    it = iter(source)
    challenges = [next(it) for _ in range(count)]
    for c in challenges:
        if not c.balanced:
            raise ValueError(f"challenge {c.challenge_id} is not balanced")
    counts = np.asarray(measure(challenges))
    if counts.shape != (count,):
        raise ValueError(f"oracle returned {counts.shape} counts for {count} challenges")
    bits, kept, _ = session_bits(counts, delta_rel)
    stamp = _now()
    records = [
        CrpRecord(c.challenge_id, c.hex, int(b), False, stamp)
        for c, b, k in zip(challenges, bits, kept)
        if k
    ]
    if db is None:
        db = CrpDatabase(m if m is not None else challenges[0].m)
    db.add_records(records)
    return db


# -- verification --------------------------------------------------------------


@dataclass
class AuthSession:
    session_id: str
    challenge_ids: list[str]
    challenge_hexes: list[str]
    expected_key: np.ndarray
    received_counts: list[int] | None = None
    verdict: str = "pending"
    measured_hd: float | None = None
    mismatches: int | None = None

    @property
    def L(self) -> int:
        return len(self.challenge_ids)

    def challenges(self, m: int) -> list[Challenge]:
        return [decode_challenge(h, m) for h in self.challenge_hexes]


def open_session(db: CrpDatabase, L: int, seed_or_rng=None) -> AuthSession:
    """Pick L unconsumed pairs at random, burn them, and build the expected key."""
    if L < 1:
        raise ValueError("session length must be >= 1")
    with db._lock:
        ids = db.sample_unconsumed(L, seed_or_rng)
        db.consume(ids)
    recs = [db[cid] for cid in ids]
    return AuthSession(
        uuid.uuid4().hex[:12],
        ids,
        [r.challenge_hex for r in recs],
        np.array([r.response_bit for r in recs], dtype=np.uint8),
    )


def verify(session: AuthSession, counts: Sequence[int], rule: DecisionRule) -> AuthSession:
    """Threshold the candidate's counts at their own median and decide."""
    if session.verdict != "pending":
        raise SessionStateError(f"session {session.session_id} already finalized ({session.verdict})")
    counts = [int(c) for c in counts]
    if len(counts) != session.L:
        raise ValueError(f"expected {session.L} counts, got {len(counts)}")
    if rule.L != session.L:
        raise ValueError(f"decision rule is for L={rule.L}, session has L={session.L}")
    bits, _, _ = session_bits(counts)
    mismatches = int(np.count_nonzero(bits != session.expected_key))
    session.received_counts = counts
    session.mismatches = mismatches
    session.measured_hd = mismatches / session.L
    session.verdict = "accept" if rule.accepts(mismatches) else "reject"
    return session


def abort_session(session: AuthSession) -> None:
    """Finalize a session that never received its counts; its pairs stay consumed."""
    if session.verdict == "pending":
        session.verdict = "reject"

"""Command-line entry point: ``specklepuf <command> ...`` (or ``python -m specklepuf``)."""
from __future__ import annotations

import argparse
import asyncio
import csv
import io
import logging
import math
import os
import signal
import sys
from pathlib import Path

import numpy as np

from . import config
from ._rng import make_rng
from .challenge import challenge_stream, generate_challenges
from .ensembles import (
    SimContext,
    inter_keys_same_challenge,
    inter_keys_same_puf,
    inter_puf_bits,
    remeasured_keys,
)
from .measurement import DetectorConfig, DegenerateFitError, fit_gamma, measure_counts, read_responses_csv
from .protocol import CrpDatabase, DatabaseExhaustedError, enroll, open_session, verify
from .puf import PufInstance, synthesize_puf
from .server import Verifier, parse_endpoint, prove, puf_responder, serve_forever
from .stats.binomial import DecisionRule, far_frr, intersect_xc
from .stats.hamming import HdKind, hd_ensemble
from .stats.nist import randomness_battery
from .stats.sweep import AXES, reduction_sweep

EXIT_ACCEPT, EXIT_REJECT, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


# -- argument types --------------------------------------------------------------


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _even_segments(s: str) -> int:
    v = _positive_int(s)
    if v < 2 or v % 2:
        raise argparse.ArgumentTypeError("segment count must be even and >= 2")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {s}")
    return v


def _unit_open(s: str) -> float:
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {s}")
    return v


def _fraction(s: str) -> float:
    v = float(s)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {s}")
    return v


def _grid(s: str) -> list[float]:
    try:
        vals = [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {s!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


def _default_db() -> str | None:
    return os.environ.get(config.DB_ENV_VAR)


# -- helpers -----------------------------------------------------------------------


def _detector(args) -> DetectorConfig:
    return DetectorConfig.calibrated(args.mean_photons)


def _load_puf(path: str) -> PufInstance:
    try:
        return PufInstance.load(path)
    except FileNotFoundError:
        raise CliError(f"no such PUF file: {path}") from None


def _db_path(args) -> str:
    if not args.db:
        raise CliError(f"no database given (use --db or set {config.DB_ENV_VAR})")
    return args.db


def _rule(args, L: int) -> DecisionRule:
    if args.xc is not None:
        return DecisionRule.from_xc(args.xc, L)
    if not args.p1 < args.p2:
        raise CliError("--p1 must be smaller than --p2")
    return intersect_xc(args.p1, args.p2, L)


def _emit(args, header: list[str], rows: list[list], text: str) -> None:
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(text)


# -- commands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    puf = synthesize_puf(args.seed, args.segments, args.cells)
    puf.save(args.out)
    print(f"{puf.puf_id} seed={puf.seed} segments={puf.segment_count} cells={puf.cell_count} -> {args.out}")
    return 0


def cmd_enroll(args) -> int:
    puf = _load_puf(args.puf)
    path = Path(_db_path(args))
    cfg = _detector(args)
    db = CrpDatabase.open(path) if path.exists() else CrpDatabase.create(path, puf.segment_count)
    if db.m != puf.segment_count:
        raise CliError(f"database holds m={db.m} challenges, PUF has {puf.segment_count} segments")
    source = challenge_stream(make_rng(args.seed, "enroll-challenges"), puf.segment_count)
    noise = make_rng(args.seed, "enroll-noise")
    before, left = len(db), args.count
    while left:
        n = min(left, args.batch)
        enroll(lambda ch: measure_counts(puf, ch, cfg, noise), source, n, args.delta, db=db)
        left -= n
    print(f"enrolled {len(db) - before} of {args.count} challenges ({db.unconsumed_count} unconsumed) -> {path}")
    return 0


def cmd_verify(args) -> int:
    puf = _load_puf(args.puf)
    db = CrpDatabase.open(_db_path(args))
    rule = _rule(args, args.key_length)
    session = open_session(db, args.key_length, make_rng(args.seed, "verify-session"))
    counts = measure_counts(puf, session.challenges(db.m), _detector(args), make_rng(args.seed, "verify-noise"))
    verify(session, counts, rule)
    db.compact()
    verdict = session.verdict.upper()
    print(f"{verdict} hd={session.measured_hd:.4f} mismatches={session.mismatches} max_mismatch={rule.max_mismatch}")
    return EXIT_ACCEPT if session.verdict == "accept" else EXIT_REJECT


def cmd_serve(args) -> int:
    db = CrpDatabase.open(_db_path(args))
    rule = _rule(args, args.key_length)
    host, port = parse_endpoint(args.listen)
    verifier = Verifier(db, rule, args.timeout, args.seed)

    def ready(h, p):
        print(f"listening on {h}:{p} L={rule.L} max_mismatch={rule.max_mismatch} unconsumed={db.unconsumed_count}", flush=True)

    def interrupt(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, interrupt)
    try:
        asyncio.run(serve_forever(verifier, host, port, ready))
    except KeyboardInterrupt:
        pass
    finally:
        db.compact()
    return 0


def cmd_prove(args) -> int:
    puf = _load_puf(args.puf)
    host, port = parse_endpoint(args.connect)
    result = prove(puf_responder(puf, _detector(args), args.seed), host, port, puf.segment_count, args.timeout)
    print(f"{result.verdict} hd={result.hd:.4f} session={result.session_id}")
    return EXIT_ACCEPT if result.verdict == "ACCEPT" else EXIT_REJECT


def cmd_stats_farfrr(args) -> int:
    if not args.p1 < args.p2:
        raise CliError("--p1 must be smaller than --p2")
    rule = DecisionRule.from_xc(args.xc, args.L) if args.xc is not None else intersect_xc(args.p1, args.p2, args.L)
    far, frr = far_frr(args.L, rule.x_c, args.p1, args.p2)
    _emit(
        args,
        ["L", "x_c", "max_mismatch", "p1", "p2", "far", "frr"],
        [[args.L, f"{rule.x_c:.6g}", rule.max_mismatch, args.p1, args.p2, f"{far:.6g}", f"{frr:.6g}"]],
        f"FAR={far:.2g} FRR={frr:.2g}  (L={args.L} x_c={rule.x_c:.4f} max_mismatch={rule.max_mismatch})\n",
    )
    return 0


def cmd_stats_hd(args) -> int:
    cfg = _detector(args)
    kind = HdKind(args.kind)
    rng = make_rng(args.seed, "stats-hd")
    if kind is HdKind.INTER_SAME_CHALLENGE:
        pufs = [synthesize_puf(args.seed + 1 + i, config.SEGMENTS, config.CELLS) for i in range(args.keys)]
        keys = inter_keys_same_challenge(pufs, generate_challenges(rng, config.SEGMENTS, args.L), cfg, args.seed)
    else:
        puf = synthesize_puf(args.seed, config.SEGMENTS, config.CELLS)
        if kind is HdKind.INTRA:
            keys = remeasured_keys(puf, generate_challenges(rng, config.SEGMENTS, args.L), cfg, args.keys, args.seed)
        else:
            keys = inter_keys_same_puf(puf, args.keys, args.L, cfg, args.seed)
    ens = hd_ensemble(keys, kind)
    _emit(
        args,
        ["kind", "L", "n_pairs", "mean", "variance"],
        [[kind.value, args.L, len(ens.samples), f"{ens.mean:.6g}", f"{ens.variance:.6g}"]],
        f"{kind.value}: L={args.L} pairs={len(ens.samples)} mean={ens.mean:.4f} variance={ens.variance:.3g}\n",
    )
    return 0


def cmd_stats_fit(args) -> int:
    if args.responses:
        samples = np.array([n for _, n in read_responses_csv(args.responses)])
    else:
        cfg = DetectorConfig.noiseless(args.mean_photons) if args.noiseless else _detector(args)
        puf = synthesize_puf(args.seed, config.SEGMENTS, args.cells)
        challenges = challenge_stream(make_rng(args.seed, "stats-fit"), config.SEGMENTS)
        samples = measure_counts(puf, [next(challenges) for _ in range(args.count)], cfg, make_rng(args.seed, "fit-noise"))
    fit = fit_gamma(samples)
    _emit(
        args,
        ["n", "mean", "shape"],
        [[samples.size, f"{fit.mean:.6g}", f"{fit.shape:.6g}"]],
        f"gamma fit over {samples.size} counts: mean={fit.mean:.1f} shape={fit.shape:.1f}\n",
    )
    return 0


def cmd_stats_sweep(args) -> int:
    cfg = DetectorConfig.shot_noise_only(args.mean_photons) if args.shot_noise_only else _detector(args)
    table = reduction_sweep(
        args.axis, args.grid, SimContext(seed=args.seed), cfg, args.L, args.delta, args.enrollments, args.seed
    )
    sys.stdout.write(table.to_csv() if args.format == "csv" else table.to_text())
    return 0


def cmd_stats_battery(args) -> int:
    bits = inter_puf_bits(args.pufs, args.block_length, _detector(args), args.seed)
    report = randomness_battery(bits, args.block_length)
    sys.stdout.write(report.to_csv() if args.format == "csv" else report.to_text())
    return 0


# -- parser ----------------------------------------------------------------------


def _add_rule_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--xc", type=_unit_open, help="normalized HD threshold")
    g.add_argument("--auto-xc", action="store_true", help="threshold at the crossing of the intra/inter binomials (default)")
    p.add_argument("--p1", type=_unit_open, default=config.P_INTRA, help="intra-HD mean for --auto-xc")
    p.add_argument("--p2", type=_unit_open, default=config.P_INTER, help="inter-HD mean for --auto-xc")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specklepuf", description="Simulated optical PUF authentication toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a PUF instance")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--segments", type=_even_segments, default=config.SEGMENTS)
    p.add_argument("--cells", type=_positive_int, default=config.CELLS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    photons = argparse.ArgumentParser(add_help=False)
    photons.add_argument("--mean-photons", type=_positive_float, default=config.MEAN_PHOTONS)
    photons.add_argument("--seed", type=_seed, default=0)

    p = sub.add_parser("enroll", parents=[photons], help="measure challenges into a CRP database")
    p.add_argument("--puf", required=True)
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--delta", type=_fraction, default=0.0, help="guard band as a fraction of the session median")
    p.add_argument("--batch", type=_positive_int, default=10000, help="challenges per enrollment session")
    p.add_argument("--db", default=_default_db())
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", parents=[photons], help="authenticate a PUF against the database locally")
    p.add_argument("--puf", required=True)
    p.add_argument("--db", default=_default_db())
    p.add_argument("--key-length", type=_positive_int, default=config.KEY_LENGTH)
    _add_rule_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="run the verifier daemon")
    p.add_argument("--db", default=_default_db())
    p.add_argument("--listen", default="127.0.0.1:7460")
    p.add_argument("--key-length", type=_positive_int, default=config.KEY_LENGTH)
    p.add_argument("--timeout", type=_positive_float, default=30.0)
    p.add_argument("--seed", type=_seed, default=None)
    _add_rule_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("prove", parents=[photons], help="answer a verifier's challenges with a PUF")
    p.add_argument("--puf", required=True)
    p.add_argument("--connect", default="127.0.0.1:7460")
    p.add_argument("--timeout", type=_positive_float, default=30.0)
    p.set_defaults(func=cmd_prove)

    stats = sub.add_parser("stats", help="statistics reports")
    ssub = stats.add_subparsers(dest="report", required=True)
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("text", "csv"), default="text")

    p = ssub.add_parser("farfrr", parents=[fmt], help="analytic FAR/FRR")
    p.add_argument("--L", type=_positive_int, default=config.KEY_LENGTH)
    _add_rule_flags(p)
    p.set_defaults(func=cmd_stats_farfrr)

    p = ssub.add_parser("hd", parents=[fmt, photons], help="simulated HD ensemble")
    p.add_argument("--kind", choices=[k.value for k in HdKind], default=HdKind.INTRA.value)
    p.add_argument("--keys", type=_positive_int, default=50)
    p.add_argument("--L", type=_positive_int, default=config.KEY_LENGTH)
    p.set_defaults(func=cmd_stats_hd)

    p = ssub.add_parser("fit", parents=[fmt, photons], help="gamma fit of photon counts")
    p.add_argument("--responses", help="CSV with challenge_id,N columns; simulates when omitted")
    p.add_argument("--count", type=_positive_int, default=10000)
    p.add_argument("--cells", type=_positive_int, default=config.CELLS)
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_stats_fit)

    p = ssub.add_parser("sweep", parents=[fmt, photons], help="FAR/FRR reduction sweep")
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--grid", type=_grid, required=True, help="comma-separated axis values")
    p.add_argument("--L", type=_positive_int, default=config.KEY_LENGTH)
    p.add_argument("--delta", type=_fraction, default=0.0)
    p.add_argument("--enrollments", type=_positive_int, default=10)
    p.add_argument("--shot-noise-only", action="store_true")
    p.set_defaults(func=cmd_stats_sweep)

    p = ssub.add_parser("battery", parents=[fmt, photons], help="randomness tests on inter-PUF keys")
    p.add_argument("--pufs", type=_positive_int, default=100)
    p.add_argument("--block-length", type=_positive_int, default=10000)
    p.set_defaults(func=cmd_stats_battery)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, DatabaseExhaustedError, DegenerateFitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

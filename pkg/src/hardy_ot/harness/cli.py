"""Command-line entry point.

Exit codes: 0 success, 1 protocol abort, 2 usage error, 3 transport error.
``HARDY_OT_SEED`` in the environment overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Sequence

import numpy as np

from .. import stats
from ..adversary import DetectionReport, apply_strategy, detection_rate, parse_strategy
from ..protocol.config import ProtocolConfig
from ..protocol.parties import Alice, Bob
from ..protocol.session import Transcript, make_header, run_party, run_session, session_id
from ..qcore import GOLDEN_ALPHA2, Q_MAX, BasisParam, Setting, ch_lhs, hardy_q, probability_table, werner_state
from ..streams import Streams
from .experiment import ExperimentSpec, monte_carlo
from .transport import TransportError, parse_address, tcp_accept, tcp_connect, tcp_listen

EXIT_OK, EXIT_ABORT, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def parse_alpha2(text: str) -> float:
    if text.strip().lower() == "golden":
        return GOLDEN_ALPHA2
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha2 must be 'golden' or a number, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("alpha2 must lie in (0, 1)")
    return v


def parse_q(text: str) -> float:
    if text.strip().lower() == "max":
        return Q_MAX
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"q must be 'max' or a number, got {text!r}") from None
    if not 0.0 < v <= Q_MAX:
        raise argparse.ArgumentTypeError(f"q must lie in (0, {Q_MAX:.6f}]")
    return v


def parse_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return int(float(lo)), int(float(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH, got {text!r}") from None


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha2", type=parse_alpha2, default=GOLDEN_ALPHA2, help="'golden' or a value in (0,1)")
    p.add_argument("--eta", type=float, default=1.0, help="visibility")
    p.add_argument("--n-runs", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--z", type=float, default=3.0, help="detection threshold in standard errors")


def _config(args) -> ProtocolConfig:
    try:
        return ProtocolConfig(alpha2=args.alpha2, eta=args.eta, n_runs=args.n_runs, seed=args.seed,
                              epsilon=args.epsilon, detection_z=args.z)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _strategy(text: str | None):
    if text is None:
        return None
    try:
        return parse_strategy(text)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad --strategy: {exc}") from exc


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    strat = _strategy(args.strategy)
    if args.sessions is None:
        args.sessions = 1 if args.bit is not None else 100
    if args.bit is not None and args.sessions != 1:
        raise UsageError("--bit applies to single-session runs")
    if args.sessions < 1 or args.workers < 1:
        raise UsageError("--sessions and --workers must be positive")
    if args.bit is not None:
        kw = apply_strategy(strat, cfg) if strat else {}
        result, tr = run_session(cfg, alice_bit=args.bit, **kw)
        if args.transcripts:
            os.makedirs(args.transcripts, exist_ok=True)
            tr.write(os.path.join(args.transcripts, "session_00000.jsonl"))
        out = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
        _emit(out, args.out)
        return EXIT_ABORT if result.abort else EXIT_OK
    spec = ExperimentSpec(
        config=cfg, sessions=args.sessions,
        alice_strategy=strat if strat and strat.party == "alice" else None,
        bob_strategy=strat if strat and strat.party == "bob" else None,
        workers=args.workers, transcript_dir=args.transcripts, stats_path=None,
    )
    agg = monte_carlo(spec)
    _emit(agg.to_json() + "\n", args.out)
    return EXIT_ABORT if agg.completed == 0 else EXIT_OK


def cmd_hardy_test(args) -> int:
    p = BasisParam.from_alpha2(args.alpha2)
    try:
        t = probability_table(werner_state(p, args.eta), p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    # rounding residue around the exact zeros
    cells = np.where(np.abs(t.cells) < 1e-12, 0.0, t.cells)
    if args.json:
        keys = ("++", "+-", "-+", "--")
        d = {"alpha2": args.alpha2, "eta": args.eta, "q": hardy_q(p), "ch_lhs": ch_lhs(t),
             "tables": {f"{Setting(a).name}{Setting(b).name}": dict(zip(keys, cells[a, b].ravel().tolist()))
                        for a in (0, 1) for b in (0, 1)}}
        sys.stdout.write(json.dumps(d, indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    lines = [f"alpha2={args.alpha2:.9f} eta={args.eta:g} q={hardy_q(p):.9f}"]
    for a in (0, 1):
        for b in (0, 1):
            c = cells[a, b]
            lines.append(f"({Setting(a).name},{Setting(b).name})  P(+,+)={c[0, 0]:.6f}  P(+,-)={c[0, 1]:.6f}"
                         f"  P(-,+)={c[1, 0]:.6f}  P(-,-)={c[1, 1]:.6f}")
    lines.append(f"ch_lhs={ch_lhs(t):.9f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    p = BasisParam.from_alpha2(args.alpha2)
    if not 0.0 <= args.eta_min < args.eta_max <= 1.0 or args.steps < 2:
        raise UsageError("need 0 <= eta-min < eta-max <= 1 and steps >= 2")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta", "ch_lhs"])
    for eta in np.linspace(args.eta_min, args.eta_max, args.steps):
        w.writerow([f"{eta:.6f}", f"{ch_lhs(probability_table(werner_state(p, float(eta)), p)):.9f}"])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_sample_size(args) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta", "min_runs"])
    for eta in args.eta:
        try:
            n = str(stats.min_runs(eta, args.q, z=args.z))
        except stats.InfeasibleVisibility:
            n = "inf"
        w.writerow([f"{eta:g}", n])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_figure1(args) -> int:
    lo, hi = args.n if args.n else (None, 10**8)
    try:
        pts = stats.figure1_curve(args.q, n_min=lo, n_max=hi, steps=args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(stats.curve_csv(pts), args.out)
    return EXIT_OK


def cmd_adversary_eval(args) -> int:
    cfg = _config(args)
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    reports: list[DetectionReport] = []
    for text in args.strategy:
        reports.append(detection_rate(_strategy(text), cfg, args.trials, workers=args.workers))
    if args.csv:
        _emit(DetectionReport.to_csv(reports), args.out)
    else:
        body = [r.to_dict() for r in reports]
        _emit(json.dumps(body[0] if len(body) == 1 else body, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def _serve(args, role: str) -> int:
    cfg = _config(args)
    strat = _strategy(args.strategy)
    if strat is not None and strat.party not in (None, role):
        raise UsageError(f"{strat.name} does not act for {role}")
    if (args.listen is None) == (args.connect is None):
        raise UsageError("give exactly one of --listen or --connect")
    try:
        if args.listen is not None:
            srv = tcp_listen(*parse_address(args.listen))
            host, port = srv.getsockname()[:2]
            print(f"listening {host}:{port}", file=sys.stderr, flush=True)
            try:
                ep = tcp_accept(srv, timeout=args.timeout)
            finally:
                srv.close()
        else:
            ep = tcp_connect(*parse_address(args.connect), timeout=args.timeout)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        ep.handshake(role, cfg.digest())
        streams = Streams(cfg.seed)
        if role == "alice":
            party = Alice(cfg, streams, strat, bit=args.bit)
        else:
            party = Bob(cfg, streams, strat)
        log: list = []
        view = run_party(party, ep, session_id(cfg), log)
    finally:
        ep.close()
    view["role"] = role
    if args.transcript:
        header = make_header(cfg, strat if role == "alice" else None, strat if role == "bob" else None,
                             args.bit if role == "alice" else None, None)
        Transcript(header, log, view).write(args.transcript)
    _emit(json.dumps(view, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_ABORT if view["abort"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hardy-ot", description="Hardy-paradox oblivious transfer simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo over honest or adversarial sessions")
    _add_config(p)
    p.add_argument("--sessions", type=int, help="default 100, or 1 with --bit")
    p.add_argument("--bit", type=int, choices=(0, 1), help="Alice's bit (single session only)")
    p.add_argument("--strategy", help="e.g. BobPadLPlus:n_lies=50")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--transcripts", help="directory for per-session JSONL transcripts")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hardy-test", help="joint probability tables and the CH value")
    p.add_argument("--alpha2", type=parse_alpha2, default=GOLDEN_ALPHA2)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_hardy_test)

    p = sub.add_parser("noise-sweep", help="CSV of the CH value against visibility")
    p.add_argument("--alpha2", type=parse_alpha2, default=GOLDEN_ALPHA2)
    p.add_argument("--eta-min", type=float, default=0.8)
    p.add_argument("--eta-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--out")
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("sample-size", help="minimum run counts for given visibilities")
    p.add_argument("--eta", type=float, nargs="+", required=True)
    p.add_argument("--q", type=parse_q, default=Q_MAX)
    p.add_argument("--z", type=float, default=stats.DEFAULT_Z)
    p.set_defaults(func=cmd_sample_size)

    p = sub.add_parser("adversary-eval", help="detection rates of cheating strategies")
    _add_config(p)
    p.add_argument("--strategy", action="append", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_adversary_eval)

    p = sub.add_parser("figure1", help="minimum visibility against run count")
    p.add_argument("--q", type=parse_q, default=Q_MAX)
    p.add_argument("--n", type=parse_range, help="LOW:HIGH run-count range, e.g. 4428:1e7")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_figure1)

    for role in ("alice", "bob"):
        p = sub.add_parser(f"serve-{role}", help=f"run {role} over TCP against a peer")
        _add_config(p)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--listen", metavar="HOST:PORT")
        g.add_argument("--connect", metavar="HOST:PORT")
        p.add_argument("--strategy")
        if role == "alice":
            p.add_argument("--bit", type=int, choices=(0, 1))
        p.add_argument("--transcript", help="write this party's JSONL transcript")
        p.add_argument("--timeout", type=float, default=60.0)
        p.add_argument("--out")
        p.set_defaults(func=lambda a, r=role: _serve(a, r), bit=None)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    env_seed = os.environ.get("HARDY_OT_SEED")
    if env_seed is not None and hasattr(args, "seed"):
        try:
            args.seed = int(env_seed)
        except ValueError:
            print(f"error: HARDY_OT_SEED must be an integer, got {env_seed!r}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())

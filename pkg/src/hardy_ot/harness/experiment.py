"""Seeded Monte Carlo over many sessions, plus deterministic replay."""

from __future__ import annotations

import json
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from ..adversary import apply_strategy, strategy_from_dict
from ..protocol.config import ProtocolConfig
from ..protocol.messages import SchemaError
from ..protocol.parties import AbortInfo, Strategy
from ..protocol.session import SessionResult, Transcript, project_view, run_session, session_id
from ..qcore import ProbTable, ch_lhs
from ..streams import session_seed


def _run_one(args) -> tuple[SessionResult, Any]:
    cfg, alice_s, bob_s, record, reducer = args
    try:
        result, transcript = run_session(cfg, alice_s, bob_s, record=record)
    except Exception as exc:  # one bad session must not sink the batch
        abort = AbortInfo("session", "error", "harness", f"{type(exc).__name__}: {exc}")
        return SessionResult(alice_bit=None, abort=abort), None
    if not record:
        return result, None
    return result, (transcript if reducer is None else reducer(transcript))


def run_batch(cfg: ProtocolConfig, seeds: Sequence[int], strategy: Strategy | None = None,
              workers: int = 1, record: bool = False,
              alice_strategy: Strategy | None = None, bob_strategy: Strategy | None = None,
              with_transcripts: bool = False, reducer: Callable[[Transcript], Any] | None = None):
    """One session per seed, results in seed order whatever ``workers`` is.

    With ``with_transcripts`` each entry is ``(result, transcript)``; a
    module-level ``reducer`` shrinks each transcript inside the worker.
    """
    if strategy is not None:
        placed = apply_strategy(strategy, cfg)
        alice_strategy = alice_strategy or placed["alice_strategy"]
        bob_strategy = bob_strategy or placed["bob_strategy"]
    jobs = [(replace(cfg, seed=int(s)), alice_strategy, bob_strategy, record, reducer) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        out = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    if with_transcripts:
        return out
    return [r for r, _ in out]


@dataclass
class ExperimentSpec:
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    sessions: int = 100
    alice_strategy: Strategy | None = None
    bob_strategy: Strategy | None = None
    workers: int = 1
    transcript_dir: str | Path | None = None
    stats_path: str | Path | None = None

    def __post_init__(self) -> None:
        if self.sessions < 1:
            raise ValueError("sessions must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def seeds(self) -> list[int]:
        return [session_seed(self.config.seed, i) for i in range(self.sessions)]


def _rate(k: int, n: int) -> tuple[float, float]:
    if n == 0:
        return math.nan, math.nan
    p = k / n
    return p, math.sqrt(p * (1.0 - p) / n)


def _nan_eq(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True)
class AggregateStats:
    """Summary of a batch. ``decode_rate`` is over completed sessions."""

    sessions: int
    completed: int
    decoded: int
    correct: int
    decode_rate: float
    decode_stderr: float
    abort_rate: dict[str, float]
    lplus_fraction: float
    rprime_fraction: float
    ch_lhs: float
    s2a_counts: tuple[int, ...]
    wall_clock: float = field(default=0.0, compare=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AggregateStats):
            return NotImplemented
        floats = ("decode_rate", "decode_stderr", "lplus_fraction", "rprime_fraction", "ch_lhs")
        ints = ("sessions", "completed", "decoded", "correct", "s2a_counts", "abort_rate")
        return (all(getattr(self, k) == getattr(other, k) for k in ints)
                and all(_nan_eq(getattr(self, k), getattr(other, k)) for k in floats))

    @property
    def total_abort_rate(self) -> float:
        return 1.0 - self.completed / self.sessions

    @classmethod
    def from_results(cls, results: Sequence[SessionResult], wall_clock: float = 0.0) -> "AggregateStats":
        m = len(results)
        if m == 0:
            raise ValueError("no results")
        done = [r for r in results if r.abort is None]
        decoded = [r for r in done if r.bob_decoded is not None]
        correct = sum(r.bob_decoded == r.alice_bit for r in decoded)
        rate, se = _rate(len(decoded), len(done))
        aborts = Counter(r.abort.code for r in results if r.abort is not None)
        lfrac = [r.counters["L_plus"] / r.counters["L"] for r in results
                 if r.counters.get("L") and "L_plus" in r.counters]
        rfrac = [r.counters["R_prime"] / r.counters["R_remaining"] for r in results
                 if r.counters.get("R_remaining") and "R_prime" in r.counters]
        counts = np.zeros(16, dtype=np.int64)
        for r in results:
            if "s2a_counts" in r.counters:
                counts += np.asarray(r.counters["s2a_counts"], dtype=np.int64)
        try:
            lhs = ch_lhs(ProbTable.from_counts(counts.reshape(2, 2, 2, 2)))
        except ValueError:
            lhs = math.nan
        return cls(
            sessions=m,
            completed=len(done),
            decoded=len(decoded),
            correct=int(correct),
            decode_rate=rate,
            decode_stderr=se,
            abort_rate={k: v / m for k, v in sorted(aborts.items())},
            lplus_fraction=float(np.mean(lfrac)) if lfrac else math.nan,
            rprime_fraction=float(np.mean(rfrac)) if rfrac else math.nan,
            ch_lhs=float(lhs),
            s2a_counts=tuple(int(x) for x in counts),
            wall_clock=wall_clock,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "sessions": self.sessions,
            "completed": self.completed,
            "decoded": self.decoded,
            "correct": self.correct,
            "decode_rate": self.decode_rate,
            "decode_stderr": self.decode_stderr,
            "abort_rate": self.abort_rate,
            "lplus_fraction": self.lplus_fraction,
            "rprime_fraction": self.rprime_fraction,
            "ch_lhs": self.ch_lhs,
            "s2a_counts": list(self.s2a_counts),
            "wall_clock": self.wall_clock,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def monte_carlo(spec: ExperimentSpec, return_results: bool = False):
    """Run ``spec.sessions`` sessions; seeds are fixed before dispatch."""
    t0 = time.perf_counter()
    record = spec.transcript_dir is not None
    out = run_batch(spec.config, spec.seeds(), workers=spec.workers, record=record,
                    alice_strategy=spec.alice_strategy, bob_strategy=spec.bob_strategy,
                    with_transcripts=True)
    results = [r for r, _ in out]
    if record:
        d = Path(spec.transcript_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, (_, tr) in enumerate(out):
            if tr is not None:
                tr.write(d / f"session_{i:05d}.jsonl")
    stats = AggregateStats.from_results(results, time.perf_counter() - t0)
    if spec.stats_path is not None:
        Path(spec.stats_path).write_text(stats.to_json() + "\n", encoding="utf-8")
    return (stats, results) if return_results else stats


# --- replay --------------------------------------------------------------------


class ReplayError(Exception):
    pass


@dataclass
class ReplayOutcome:
    result: SessionResult
    transcript: Transcript
    divergence: int | None
    result_matches: bool

    @property
    def identical(self) -> bool:
        return self.divergence is None and self.result_matches


def replay(source: Transcript | str | Path) -> ReplayOutcome:
    """Re-run a recorded session from its header and diff it message by message.

    ``divergence`` is the sequence number of the first differing message, or
    the length of the shorter log when one is a prefix of the other.
    """
    tr = source if isinstance(source, Transcript) else Transcript.read(source)
    h = tr.header
    try:
        cfg = ProtocolConfig.from_dict(h["config"])
        alice_s = strategy_from_dict(h.get("alice_strategy"))
        bob_s = strategy_from_dict(h.get("bob_strategy"))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad transcript header: {exc}") from exc
    sid = session_id(cfg)
    if any(m.session_id != sid for m in tr.messages):
        raise ReplayError("seed mismatch: message session ids do not match the header seed")
    result, fresh = run_session(cfg, alice_s, bob_s, alice_bit=h.get("alice_bit"),
                                salts=h.get("salts") or None)
    old = [m.to_json() for m in tr.messages]
    new = [m.to_json() for m in fresh.messages]
    divergence = next((i for i, (x, y) in enumerate(zip(old, new)) if x != y), None)
    if divergence is None and len(old) != len(new):
        divergence = min(len(old), len(new))
    if tr.result is None:
        matches = True
    elif "role" in tr.result:
        recorded = {k: v for k, v in tr.result.items() if k != "role"}
        matches = _normalize(recorded) == _normalize(project_view(result, tr.result["role"]))
    else:
        matches = _normalize(tr.result) == _normalize(result.to_dict())
    return ReplayOutcome(result, fresh, divergence, matches)


def _normalize(d: dict[str, Any]) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))

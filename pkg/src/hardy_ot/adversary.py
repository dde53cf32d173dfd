"""Cheating strategies and Monte Carlo estimates of how often the checks catch them.

Every strategy overrides the hooks of exactly one protocol step and is
otherwise honest. Adversarial randomness comes from the party's
``adversary`` stream so that all honest streams stay aligned with an honest
session of the same seed.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .protocol import steps
from .protocol.config import ProtocolConfig
from .protocol.parties import HONEST, Strategy
from .qcore import (
    BasisParam,
    PureState2Q,
    Setting,
    hardy_state,
    label_plus_probs,
    probability_table,
)
from .streams import session_seed

# --- Bob ---------------------------------------------------------------------


class BobPadLPlus(Strategy):
    """Adds ``n_lies`` runs with true outcome -1 to L+ and claims +1 for them."""

    name = "BobPadLPlus"
    party = "bob"
    deviates_at = ("S3",)
    detected_at = ("S3a", "S5a")

    def __init__(self, n_lies: int = 50) -> None:
        if n_lies < 0:
            raise ValueError("n_lies must be non-negative")
        self.n_lies = int(n_lies)

    def params(self) -> dict[str, Any]:
        return {"n_lies": self.n_lies}

    def offer(self, bob, L, honest):
        L = np.asarray(L, dtype=np.int64)
        pool = L[bob.b[L] == -1]
        k = min(self.n_lies, pool.size)
        lies = bob.rng("adversary").choice(pool, size=k, replace=False) if k else pool[:0]
        bob.claimed[lies] = 1
        bob.scratch["lies"] = np.sort(lies).tolist()
        return np.union1d(np.asarray(honest, dtype=np.int64), lies).tolist()


class BobFilterLPlus(Strategy):
    """Announces only the +1 runs whose Alice qubit, read by a genie, makes the
    pair state ``|u_perp>|d>`` or ``|d_perp>|u>``.

    The genie stands for a two-qubit measurement that perfectly identifies
    those product states; it upper-bounds what the real attack could keep.
    """

    name = "BobFilterLPlus"
    party = "bob"
    deviates_at = ("S3",)
    detected_at = ("S3a",)

    def offer(self, bob, L, honest):
        L = np.asarray(L, dtype=np.int64)
        lab = bob.alice_labels[L]
        B = bob.B[L]
        keep = ((lab == 1) & (B == Setting.D)) | ((lab == 3) & (B == Setting.U))
        keep &= bob.b[L] == 1
        return L[keep].tolist()


class BobPremeasureFilter(Strategy):
    """Measures the Alice qubits of each R' pair in his own bases before
    announcing, and keeps only the pairs where a -1 exposed Alice's basis.

    Dropped R' pairs are reported as excluded with their true settings.
    """

    name = "BobPremeasureFilter"
    party = "bob"
    deviates_at = ("S5",)
    detected_at = ("S5a",)

    def refine(self, bob, remaining, r_prime):
        if not r_prime:
            return r_prime
        members = np.asarray([bob.pairs[pid] for pid in r_prime], dtype=np.int64)
        runs = members.ravel()
        out = bob.measure_alice_qubits(runs, bob.B[runs], bob.rng("adversary")).reshape(-1, 2)
        known = (out == -1).any(axis=1)
        return np.asarray(r_prime, dtype=np.int64)[known].tolist()


class BobFakeRPrime(Strategy):
    """Moves ``n_lies`` equal-setting pairs into R'.

    With ``cover`` Bob answers audits of those pairs with a fabricated second
    setting so the pair looks valid; otherwise he reveals the true settings.
    """

    name = "BobFakeRPrime"
    party = "bob"
    deviates_at = ("S5",)
    detected_at = ("S5a",)

    def __init__(self, n_lies: int = 20, cover: bool = False) -> None:
        if n_lies < 0:
            raise ValueError("n_lies must be non-negative")
        self.n_lies = int(n_lies)
        self.cover = bool(cover)

    def params(self) -> dict[str, Any]:
        return {"n_lies": self.n_lies, "cover": self.cover}

    def refine(self, bob, remaining, r_prime):
        pool = np.setdiff1d(np.asarray(remaining, dtype=np.int64), np.asarray(r_prime, dtype=np.int64))
        k = min(self.n_lies, pool.size)
        fakes = bob.rng("adversary").choice(pool, size=k, replace=False) if k else pool[:0]
        bob.scratch["fakes"] = set(fakes.tolist())
        return np.union1d(np.asarray(r_prime, dtype=np.int64), fakes).tolist()

    def reveal_bases(self, bob, pair_ids, runs):
        B = bob.B[runs].copy()
        if self.cover:
            fakes = bob.scratch.get("fakes", set())
            for j, pid in enumerate(pair_ids):
                if pid in fakes:
                    B[2 * j + 1] = 1 - B[2 * j]
        return B


# --- Alice -------------------------------------------------------------------


class AliceFalsePairs(Strategy):
    """Adds ``n_lies`` pairs built from runs left over by the honest pairing,
    which break ``A1 == A2`` or ``a1 != a2``.

    With ``cover`` the audit answer keeps the first member true and declares
    the second as ``(A1, -a1)``; otherwise both members are revealed truthfully.
    """

    name = "AliceFalsePairs"
    party = "alice"
    deviates_at = ("S4",)
    detected_at = ("S4a",)

    def __init__(self, n_lies: int = 20, cover: bool = True) -> None:
        if n_lies < 0:
            raise ValueError("n_lies must be non-negative")
        self.n_lies = int(n_lies)
        self.cover = bool(cover)

    def params(self) -> dict[str, Any]:
        return {"n_lies": self.n_lies, "cover": self.cover}

    def make_pairs(self, alice, candidates):
        honest = steps.make_pairs(alice.A, alice.a, candidates, alice.rng("pairs"))
        used = np.asarray(honest, dtype=np.int64).ravel()
        left = np.setdiff1d(np.asarray(candidates, dtype=np.int64), used)
        rng = alice.rng("adversary")
        k = min(self.n_lies, left.size // 2)
        chosen = rng.choice(left, size=2 * k, replace=False).reshape(-1, 2) if k else left[:0].reshape(0, 2)
        fakes = [tuple(pr) for pr in chosen.tolist()]
        pairs = honest + fakes
        order = rng.permutation(len(pairs))
        alice.scratch["fakes"] = {int(np.flatnonzero(order == len(honest) + j)[0]) for j in range(k)}
        return [pairs[i] for i in order]

    def reveal_pairs(self, alice, pair_ids, runs):
        A, a = alice.A[runs].copy(), alice.a[runs].copy()
        if self.cover:
            fakes = alice.scratch.get("fakes", set())
            for j, pid in enumerate(pair_ids):
                if pid in fakes:
                    A[2 * j + 1] = A[2 * j]
                    a[2 * j + 1] = -a[2 * j]
        return A, a


BAD_SOURCE_KINDS = ("product", "ancilla", "wrong-alpha")


class AliceBadSource(Strategy):
    """Distributes something other than the Hardy state.

    ``product`` sends ``|u>|u>``, ``ancilla`` a maximally entangled pair, and
    ``wrong-alpha`` the Hardy state built for ``source_alpha2`` while the
    measurement bases stay those of the configuration.
    """

    name = "AliceBadSource"
    party = "alice"
    deviates_at = ("S1",)
    detected_at = ("S2a",)

    def __init__(self, kind: str = "product", source_alpha2: float = 0.3) -> None:
        if kind not in BAD_SOURCE_KINDS:
            raise ValueError(f"kind must be one of {BAD_SOURCE_KINDS}")
        self.kind = kind
        self.source_alpha2 = float(source_alpha2)
        if kind == "wrong-alpha":
            BasisParam.from_alpha2(self.source_alpha2)

    def params(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "wrong-alpha":
            d["source_alpha2"] = self.source_alpha2
        return d

    def state(self) -> PureState2Q:
        if self.kind == "product":
            return PureState2Q(np.array([1.0, 0.0, 0.0, 0.0]))
        if self.kind == "ancilla":
            return PureState2Q(np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0))
        return hardy_state(BasisParam.from_alpha2(self.source_alpha2))

    def source_state(self, alice):
        return self.state()


STRATEGIES: dict[str, type[Strategy]] = {
    cls.name: cls
    for cls in (BobPadLPlus, BobFilterLPlus, BobPremeasureFilter, BobFakeRPrime,
                AliceFalsePairs, AliceBadSource)
}


def strategy_from_dict(d: dict[str, Any] | None) -> Strategy:
    if d is None or d.get("name", "honest") == "honest":
        return HONEST
    d = dict(d)
    name = d.pop("name")
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}") from None
    return cls(**d)


def _coerce(v: str) -> Any:
    low = v.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def parse_strategy(text: str) -> Strategy:
    """Parse a ``"BobPadLPlus:n_lies=50"`` style string; ``"honest"`` gives the honest strategy."""
    name, _, rest = text.partition(":")
    d: dict[str, Any] = {"name": name.strip()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"bad strategy parameter {item!r}")
        d[k.strip()] = _coerce(v.strip())
    return strategy_from_dict(d)


def apply_strategy(strategy: Strategy, cfg: ProtocolConfig) -> dict[str, Strategy | None]:
    """Keyword arguments placing ``strategy`` on its party for ``run_session``."""
    if strategy.party == "alice":
        return {"alice_strategy": strategy, "bob_strategy": None}
    if strategy.party == "bob":
        return {"alice_strategy": None, "bob_strategy": strategy}
    return {"alice_strategy": None, "bob_strategy": None}


# --- oracles -----------------------------------------------------------------


def filter_lplus_rate(cfg: ProtocolConfig) -> float:
    """Expected |L+|/|L| under BobFilterLPlus."""
    c = cfg.table.cells
    return float((c[0, 1, 1, 0] + c[1, 0, 1, 0]) / 4.0)


def premeasure_info_gain(cfg: ProtocolConfig) -> float:
    """Probability that measuring both Alice qubits of an honest R' pair in
    Bob's own bases shows at least one -1."""
    t = cfg.table.cells
    pp = label_plus_probs(cfg.basis)
    num = den = 0.0
    for s in (0, 1):
        plus, minus = t[s, :, 0, 0] / 4.0, t[s, :, 1, 0] / 4.0
        # a pair of class s forms at the rate of its rarer member class
        w_pair = min(plus.sum(), minus.sum())
        wp, wm = plus / plus.sum(), minus / minus.sum()
        for b1 in (0, 1):
            b2 = 1 - b1
            w = w_pair * wp[b1] * wm[b2]
            no_minus = pp[2 * s, b1] * pp[2 * s + 1, b2]
            num += w * (1.0 - no_minus)
            den += w
    return num / den


def premeasure_announced_fraction(cfg: ProtocolConfig) -> float:
    """Expected |R'|/|R| announced by BobPremeasureFilter."""
    t = cfg.table
    rates = steps.pair_class_rates(t)
    w = np.array([min(rates[s]) for s in (Setting.U, Setting.D)])
    honest = float(np.dot(w / w.sum(), [steps.pair_diff_probability(t, s) for s in (Setting.U, Setting.D)]))
    return honest * premeasure_info_gain(cfg)


def pad_lie_contradiction(cfg: ProtocolConfig) -> float:
    """Probability that an audited padded run (true b=-1, claimed +1) shows a
    Hardy-zero combination."""
    c = cfg.table.cells
    hit = tot = 0.0
    for sa in (0, 1):
        for sb in (0, 1):
            for ia in (0, 1):
                w = c[sa, sb, ia, 1]
                tot += w
                if (sa, 1 - 2 * ia, sb, 1) in steps.HARDY_ZERO_CELLS:
                    hit += w
    return hit / tot


def source_violation_rate(strategy: AliceBadSource, cfg: ProtocolConfig) -> float:
    """Per-run Hardy-zero rate of the substituted source, settings uniform."""
    c = probability_table(strategy.state(), cfg.basis).cells
    return float(sum(c[sa, sb, (1 - a) // 2, (1 - b) // 2] for sa, a, sb, b in steps.HARDY_ZERO_CELLS) / 4.0)


# --- detection estimates -------------------------------------------------------


@dataclass
class DetectionReport:
    strategy: dict[str, Any]
    trials: int
    detected: int
    detecting_step: dict[str, int] = field(default_factory=dict)
    completed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1 or not 0 <= self.detected <= self.trials:
            raise ValueError("need 0 <= detected <= trials and trials >= 1")

    @property
    def detection_rate(self) -> float:
        return self.detected / self.trials

    @property
    def stderr(self) -> float:
        p = self.detection_rate
        return float(np.sqrt(p * (1.0 - p) / self.trials))

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "trials": self.trials,
            "detected": self.detected,
            "detection_rate": self.detection_rate,
            "detecting_step": dict(sorted(self.detecting_step.items())),
            "completed": self.completed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    CSV_HEADER = ("strategy", "trials", "rate", "detected", "params", "steps")

    def csv_row(self) -> list[Any]:
        params = {k: v for k, v in self.strategy.items() if k != "name"}
        return [self.strategy.get("name", "honest"), self.trials, f"{self.detection_rate:.6f}",
                self.detected, json.dumps(params, sort_keys=True),
                json.dumps(dict(sorted(self.detecting_step.items())), sort_keys=True)]

    @classmethod
    def to_csv(cls, reports: list["DetectionReport"]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cls.CSV_HEADER)
        for r in reports:
            w.writerow(r.csv_row())
        return buf.getvalue()


def attributable(strategy: Strategy, abort_step: str | None) -> bool:
    if abort_step is None:
        return False
    return abort_step in strategy.detected_at if strategy.detected_at else True


def detection_rate(strategy: Strategy, cfg: ProtocolConfig, trials: int, workers: int = 1
                   ) -> DetectionReport:
    """Run ``trials`` sessions seeded from ``cfg.seed`` and count the aborts at
    the strategy's checking step. For the honest strategy every abort counts."""
    from .harness.experiment import run_batch

    if trials < 1:
        raise ValueError("trials must be at least 1")
    seeds = [session_seed(cfg.seed, i) for i in range(trials)]
    results = run_batch(cfg, seeds, strategy, workers=workers)
    hist: Counter[str] = Counter()
    detected = completed = 0
    for r in results:
        if r.abort is None:
            completed += 1
            continue
        hist[r.abort.code] += 1
        if attributable(strategy, r.abort.step):
            detected += 1
    return DetectionReport(strategy.to_dict(), trials, detected, dict(hist), completed)

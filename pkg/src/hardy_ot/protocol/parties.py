"""Alice and Bob as message-driven state machines.

Each party runs straight-line code against a :class:`Channel`; turns strictly
alternate, so a party always drains the peer's messages for the current turn
before it acts. A failed check raises :class:`CheckFailed`, which is turned into
an ``Abort`` message for the peer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..qcore import (
    Setting,
    alice_conditionals,
    eigenstate,
    measure_labels,
    measure_states,
    plus_table,
    werner_state,
    Outcome,
)
from ..streams import Streams
from . import steps
from .config import ProtocolConfig
from .messages import Message, MsgType


class CheckFailed(Exception):
    def __init__(self, step: str, reason: str, detail: str = "", local: bool = False) -> None:
        super().__init__(f"{step}-{reason}: {detail}")
        self.step, self.reason, self.detail = step, reason, detail
        # local aborts happen after the last message and are never sent
        self.local = local


class PeerAborted(Exception):
    def __init__(self, msg: Message) -> None:
        super().__init__(f"peer aborted at {msg.payload['step']}: {msg.payload['reason']}")
        self.msg = msg


class SessionError(Exception):
    """Out-of-protocol failure: wrong message order, bad session id, ..."""


@dataclass(frozen=True)
class AbortInfo:
    step: str
    reason: str
    by: str
    detail: str = ""

    @property
    def code(self) -> str:
        return f"{self.step}-{self.reason}"


MESSAGE_STEP = {
    MsgType.QUBIT_BATCH: "S1",
    MsgType.MEASURED_QUBIT: "S2",
    MsgType.LIST_ANNOUNCEMENT: "S3",
    MsgType.PAIR_LIST: "S4",
    MsgType.PAIR_SUBSET: "S5",
    MsgType.OT_INDEX: "S6",
}


def message_step(msg: Message) -> str:
    return MESSAGE_STEP.get(msg.type) or msg.payload["step"]


class Channel:
    """Sequence-numbering, logging wrapper around a transport endpoint."""

    def __init__(self, endpoint, role: str, session_id: str, log: list[Message] | None = None):
        self.endpoint = endpoint
        self.role = role
        self.peer = "bob" if role == "alice" else "alice"
        self.session_id = session_id
        self.seq = 0
        self.log = log

    def send(self, type_: MsgType, payload: dict[str, Any]) -> Message:
        msg = Message(self.seq, self.session_id, self.role, type_, payload)
        self.seq += 1
        if self.log is not None:
            self.log.append(msg)
        self.endpoint.send(msg)
        return msg

    def recv(self, *expected: MsgType) -> Message:
        msg = self.endpoint.recv()
        if msg.session_id != self.session_id:
            raise SessionError(f"session id mismatch: {msg.session_id!r}")
        if msg.seq != self.seq:
            raise SessionError(f"expected seq {self.seq}, got {msg.seq}")
        if msg.sender != self.peer:
            raise SessionError(f"unexpected sender {msg.sender!r}")
        self.seq += 1
        if self.log is not None:
            self.log.append(msg)
        if msg.type is MsgType.ABORT:
            raise PeerAborted(msg)
        if expected and msg.type not in expected:
            raise SessionError(f"expected {[e.value for e in expected]}, got {msg.type.value}")
        return msg


class Strategy:
    """Honest behaviour; adversaries override individual hooks."""

    name = "honest"
    party: str | None = None
    deviates_at: tuple[str, ...] = ()
    detected_at: tuple[str, ...] = ()

    def params(self) -> dict[str, Any]:
        return {}

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **self.params()}

    # Alice hooks
    def source_state(self, alice: "Alice"):
        return None

    def make_pairs(self, alice: "Alice", candidates: list[int]) -> list[tuple[int, int]]:
        return steps.make_pairs(alice.A, alice.a, candidates, alice.rng("pairs"))

    def reveal_pairs(self, alice: "Alice", pair_ids: list[int], runs: np.ndarray):
        return alice.A[runs], alice.a[runs]

    # Bob hooks
    def offer(self, bob: "Bob", L: np.ndarray, honest: list[int]) -> list[int]:
        return honest

    def refine(self, bob: "Bob", remaining: list[int], r_prime: list[int]) -> list[int]:
        return r_prime

    def reveal_bases(self, bob: "Bob", pair_ids: list[int], runs: np.ndarray):
        return bob.B[runs]

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


HONEST = Strategy()


def _as_int_list(x) -> list[int]:
    return np.asarray(x, dtype=np.int64).ravel().tolist()


def _in_range(items, n: int) -> bool:
    arr = np.asarray(items, dtype=np.int64)
    return bool(arr.size == 0 or (arr.min() >= 0 and arr.max() < n))


class Party:
    role = ""

    def __init__(self, cfg: ProtocolConfig, streams: Streams, strategy: Strategy | None = None):
        self.cfg = cfg
        self.p = cfg.basis
        self.streams = streams
        self.strategy = strategy or HONEST
        if self.strategy.party not in (None, self.role):
            raise ValueError(f"{self.strategy.name} is a {self.strategy.party} strategy")
        self.abort: AbortInfo | None = None
        self.counters: dict[str, Any] = {}
        # per-session state owned by the strategy; strategies themselves stay immutable
        self.scratch: dict[str, Any] = {}

    def rng(self, label: str) -> np.random.Generator:
        return self.streams.get(f"{self.role}.{label}")

    def run(self, ch: Channel) -> None:
        try:
            self._protocol(ch)
        except CheckFailed as exc:
            self.abort = AbortInfo(exc.step, exc.reason, self.role, exc.detail)
            if not exc.local:
                ch.send(MsgType.ABORT, {"step": exc.step, "reason": exc.reason, "detail": exc.detail})
        except PeerAborted as exc:
            pl = exc.msg.payload
            self.abort = AbortInfo(pl["step"], pl["reason"], ch.peer, pl.get("detail", ""))

    def _protocol(self, ch: Channel) -> None:
        raise NotImplementedError

    # shared checks ---------------------------------------------------------

    def _hardy_gate(self, step: str, A, a, B, b) -> None:
        mask = steps.hardy_zero_mask(A, a, B, b)
        v, n = int(mask.sum()), int(mask.size)
        self.counters[f"violations_{step}"] = self.counters.get(f"violations_{step}", 0) + v
        if not self.cfg.noisy:
            if v:
                raise CheckFailed(step, "hardy", f"{v} Hardy-zero events in {n} tuples")
        elif not steps.rate_gate(v, n, self.cfg.epsilon, self.cfg.detection_z):
            raise CheckFailed(step, "hardy", f"{v}/{n} Hardy-zero events exceed epsilon")

    @staticmethod
    def _check_reveal(msg: Message, req: Message, step: str, runs: list[int]) -> None:
        pl = msg.payload
        if pl["step"] != step or pl["request"] != req.seq or pl["runs"] != _as_int_list(runs):
            raise CheckFailed(step, "malformed", "reveal does not answer the request")
        if len(pl["settings"]) != len(runs) or len(pl["outcomes"]) != len(runs):
            raise CheckFailed(step, "malformed", "reveal has the wrong length")
        settings = np.asarray(pl["settings"], dtype=np.int64)
        outcomes = np.asarray(pl["outcomes"], dtype=np.int64)
        if np.any((settings != 0) & (settings != 1)) or np.any(np.abs(outcomes) != 1):
            raise CheckFailed(step, "malformed", "reveal values out of range")


def _flatten_pairs(pairs, pair_ids) -> np.ndarray:
    if not pair_ids:
        return np.zeros(0, dtype=np.int64)
    return np.array([pairs[pid] for pid in pair_ids], dtype=np.int64).ravel()


class Alice(Party):
    role = "alice"

    def __init__(self, cfg, streams, strategy=None, bit: int | None = None):
        super().__init__(cfg, streams, strategy)
        self.bit = int(self.rng("bit").integers(2)) if bit is None else int(bit)
        if self.bit not in (0, 1):
            raise ValueError("bit must be 0 or 1")

    def _protocol(self, ch: Channel) -> None:
        cfg, c = self.cfg, self.counters
        N = cfg.n_runs
        z = cfg.detection_z

        # S1/S2: sample Alice's side first; Bob's halves travel as the states
        # they are left in, indexed by Alice's result.
        state = self.strategy.source_state(self)
        if state is None:
            state = werner_state(self.p, cfg.eta)
        probs, rho_bob = alice_conditionals(state, self.p)
        self.A = self.rng("setting").integers(0, 2, N)
        a_minus = self.rng("source").random(N) >= probs[2 * self.A]
        self.a = np.where(a_minus, -1, 1).astype(np.int64)
        self.labels = 2 * self.A + a_minus.astype(np.int64)
        labels = _as_int_list(self.labels)
        ch.send(MsgType.QUBIT_BATCH, {
            "n": N, "states": [m.ravel().tolist() for m in rho_bob], "index": labels})
        ch.send(MsgType.MEASURED_QUBIT, {"labels": labels})

        # S2(a)
        r_a = steps.select_subset(range(N), cfg.frac_s2a, self.rng("s2a"))
        req_a = ch.send(MsgType.REVEAL_REQUEST, {"step": "S2a", "items": r_a})
        rev = ch.recv(MsgType.REVEAL)
        req_b = ch.recv(MsgType.REVEAL_REQUEST)
        self._check_reveal(rev, req_a, "S2a", r_a)
        B = np.array(rev.payload["settings"], dtype=np.int64)
        b = np.array(rev.payload["outcomes"], dtype=np.int64)
        idx = np.array(r_a, dtype=np.int64)
        counts = np.zeros((2, 2, 2, 2), dtype=np.int64)
        np.add.at(counts, (self.A[idx], B, (1 - self.a[idx]) // 2, (1 - b) // 2), 1)
        c["s2a_counts"] = counts.ravel().tolist()
        self._hardy_gate("S2a", self.A[idx], self.a[idx], B, b)

        r_b = _as_int_list(req_b.payload["items"])
        if req_b.payload["step"] != "S2a" or not _in_range(r_b, N):
            raise CheckFailed("S2a", "malformed", "bad reveal request")
        ch.send(MsgType.REVEAL, {"step": "S2a", "request": req_b.seq, "runs": r_b,
                                 "settings": _as_int_list(self.A[r_b]),
                                 "outcomes": _as_int_list(self.a[r_b])})

        # S3 / S3(a)
        announced = np.zeros(N, dtype=bool)
        announced[r_a] = True
        announced[r_b] = True
        L = np.flatnonzero(~announced)
        c["L"] = int(L.size)
        lplus = _as_int_list(ch.recv(MsgType.LIST_ANNOUNCEMENT).payload["runs"])
        lp = np.asarray(lplus, dtype=np.int64)
        if (np.unique(lp).size != lp.size or np.any(lp < 0) or np.any(lp >= N)
                or np.any(announced[lp])):
            raise CheckFailed("S3a", "malformed", "L+ is not a subset of L")
        c["L_plus"] = len(lplus)
        if L.size == 0:
            raise CheckFailed("S3a", "empty", "no runs left after S2(a)")
        if not steps.frequency_gate(len(lplus), int(L.size), steps.bob_plus_rate(cfg.table), z):
            raise CheckFailed("S3a", "frequency", f"|L+|/|L| = {len(lplus) / L.size:.4f}")
        l1 = steps.select_subset(lplus, cfg.frac_s3a, self.rng("s3a"))
        req = ch.send(MsgType.REVEAL_REQUEST, {"step": "S3a", "items": l1})
        rev = ch.recv(MsgType.REVEAL)
        self._check_reveal(rev, req, "S3a", l1)
        if any(o != 1 for o in rev.payload["outcomes"]):
            raise CheckFailed("S3a", "inconsistent", "a run in L+ revealed outcome -1")
        self._hardy_gate("S3a", self.A[l1], self.a[l1], np.array(rev.payload["settings"]),
                         np.ones(len(l1), dtype=np.int64))

        # S4
        l2 = np.setdiff1d(lp, np.asarray(l1, dtype=np.int64)).tolist()
        self.pairs = self.strategy.make_pairs(self, l2)
        c["R"] = len(self.pairs)
        ch.send(MsgType.PAIR_LIST, {"pairs": [list(pr) for pr in self.pairs]})

        # S4(a): answer Bob's audit
        req = ch.recv(MsgType.REVEAL_REQUEST)
        checked4 = _as_int_list(req.payload["items"])
        if req.payload["step"] != "S4a" or not _in_range(checked4, len(self.pairs)):
            raise CheckFailed("S4a", "malformed", "bad pair audit request")
        runs = _flatten_pairs(self.pairs, checked4)
        settings, outcomes = self.strategy.reveal_pairs(self, checked4, runs)
        ch.send(MsgType.REVEAL, {"step": "S4a", "request": req.seq, "runs": _as_int_list(runs),
                                 "settings": _as_int_list(settings), "outcomes": _as_int_list(outcomes)})

        # S5 / S5(a)
        sub = ch.recv(MsgType.PAIR_SUBSET).payload
        checked4_set = set(checked4)
        remaining = [i for i in range(len(self.pairs)) if i not in checked4_set]
        r_prime = _as_int_list(sub["r_prime"])
        excluded = _as_int_list(sub["excluded"])
        if sorted(r_prime + excluded) != remaining or len(sub["settings"]) != len(excluded):
            raise CheckFailed("S5a", "malformed", "R' and excluded pairs do not partition R")
        c["R_remaining"] = len(remaining)
        c["R_prime"] = len(r_prime)
        ex_runs = _flatten_pairs(self.pairs, excluded)
        ex_settings = np.array(sub["settings"], dtype=np.int64).reshape(-1)
        self._hardy_gate("S5a", self.A[ex_runs], self.a[ex_runs], ex_settings,
                         np.ones(ex_runs.size, dtype=np.int64))
        if remaining:
            groups = [int(self.A[self.pairs[i][0]]) for i in remaining]
            expected = steps.expected_rprime_fraction(cfg.table, groups)
            c["R_prime_expected"] = expected
            if not steps.frequency_gate(len(r_prime), len(remaining), expected, z):
                raise CheckFailed("S5a", "frequency",
                                  f"|R'|/|R| = {len(r_prime) / len(remaining):.4f} vs {expected:.4f}")
        checked5 = steps.select_subset(r_prime, cfg.frac_s5a, self.rng("s5a"))
        req = ch.send(MsgType.REVEAL_REQUEST, {"step": "S5a", "items": checked5})
        rev = ch.recv(MsgType.REVEAL)
        runs = _flatten_pairs(self.pairs, checked5)
        self._check_reveal(rev, req, "S5a", _as_int_list(runs))
        B = np.array(rev.payload["settings"], dtype=np.int64)
        if np.any(B[0::2] == B[1::2]):
            raise CheckFailed("S5a", "constraint", "a pair in R' has equal settings")
        self._hardy_gate("S5a", self.A[runs], self.a[runs], B, np.array(rev.payload["outcomes"]))

        # S6
        checked5_set = set(checked5)
        surviving = [i for i in r_prime if i not in checked5_set]
        c["R_prime_surviving"] = len(surviving)
        groups = [int(self.A[self.pairs[i][0]]) for i in surviving]
        try:
            pid = steps.s6_encode(self.bit, surviving, groups, cfg.encoding, self.rng("s6"))
        except steps.NoQualifyingPair as exc:
            raise CheckFailed("S6", "no-qualifying-pair", str(exc)) from None
        self.ot_pair = pid
        ch.send(MsgType.OT_INDEX, {"pair": pid})


class Bob(Party):
    role = "bob"

    def __init__(self, cfg, streams, strategy=None):
        super().__init__(cfg, streams, strategy)
        self.decoded: int | None = None
        self.s7_outcomes: list[int] | None = None

    def measure_alice_qubits(self, runs, settings, rng) -> np.ndarray:
        """Measure held Alice qubits (eigenstate labels); collapses them."""
        runs = np.asarray(runs, dtype=np.int64)
        settings = np.asarray(settings, dtype=np.int64)
        idx = measure_labels(self.alice_labels[runs], settings, self.p, rng)
        self.alice_labels[runs] = 2 * settings + idx
        return np.where(idx == 0, 1, -1)

    def _protocol(self, ch: Channel) -> None:
        cfg, c = self.cfg, self.counters
        N = cfg.n_runs

        qb = ch.recv(MsgType.QUBIT_BATCH).payload
        mq = ch.recv(MsgType.MEASURED_QUBIT).payload
        req_a = ch.recv(MsgType.REVEAL_REQUEST)
        if qb["n"] != N or len(qb["index"]) != N or len(mq["labels"]) != N:
            raise SessionError("qubit batch size does not match the configuration")
        rho = np.array(qb["states"], dtype=float).reshape(-1, 2, 2)
        self.B = self.rng("setting").integers(0, 2, N)
        b_idx = measure_states(plus_table(rho, self.p), np.array(qb["index"]), self.B,
                               self.rng("measure"))
        self.b = np.where(b_idx == 0, 1, -1).astype(np.int64)
        self.claimed = self.b.copy()
        self.alice_labels = np.array(mq["labels"], dtype=np.int64)

        # S2(a)
        r_a = _as_int_list(req_a.payload["items"])
        if req_a.payload["step"] != "S2a" or not _in_range(r_a, N):
            raise CheckFailed("S2a", "malformed", "bad reveal request")
        ch.send(MsgType.REVEAL, {"step": "S2a", "request": req_a.seq, "runs": r_a,
                                 "settings": _as_int_list(self.B[r_a]),
                                 "outcomes": _as_int_list(self.claimed[r_a])})
        taken = np.zeros(N, dtype=bool)
        taken[r_a] = True
        r_b = steps.select_subset(np.flatnonzero(~taken), cfg.frac_s2a, self.rng("s2a"))
        req_b = ch.send(MsgType.REVEAL_REQUEST, {"step": "S2a", "items": r_b})
        rev = ch.recv(MsgType.REVEAL)
        self._check_reveal(rev, req_b, "S2a", r_b)
        A = np.array(rev.payload["settings"], dtype=np.int64)
        a = np.array(rev.payload["outcomes"], dtype=np.int64)
        rem = self.measure_alice_qubits(r_b, A, self.rng("verify"))
        if np.any(rem != a):
            raise CheckFailed("S2a", "remeasure", f"{int(np.sum(rem != a))} qubits disagree")
        self._hardy_gate("S2a", A, a, self.B[r_b], self.b[r_b])

        # S3
        taken[r_b] = True
        L = np.flatnonzero(~taken)
        honest = steps.s3_offer(L, self.b)
        lplus = self.strategy.offer(self, L, honest)
        self.lplus = lplus
        c["L"] = int(L.size)
        c["L_plus"] = len(lplus)
        ch.send(MsgType.LIST_ANNOUNCEMENT, {"runs": lplus})
        req = ch.recv(MsgType.REVEAL_REQUEST)
        l1 = _as_int_list(req.payload["items"])
        if req.payload["step"] != "S3a" or not set(l1) <= set(lplus):
            raise CheckFailed("S3a", "malformed", "audit request outside L+")
        ch.send(MsgType.REVEAL, {"step": "S3a", "request": req.seq, "runs": l1,
                                 "settings": _as_int_list(self.B[l1]),
                                 "outcomes": _as_int_list(self.claimed[l1])})

        # S4 / S4(a)
        raw = ch.recv(MsgType.PAIR_LIST).payload["pairs"]
        try:
            arr = np.asarray(raw, dtype=np.int64).reshape(-1, 2)
        except ValueError:
            arr = None
        allowed = np.zeros(N, dtype=bool)
        allowed[np.asarray(lplus, dtype=np.int64)] = True
        allowed[np.asarray(l1, dtype=np.int64)] = False
        used = None if arr is None else arr.ravel()
        if (arr is None or arr.shape[0] != len(raw) or not _in_range(used, N)
                or np.unique(used).size != used.size or not allowed[used].all()):
            raise CheckFailed("S4a", "malformed", "pairs must use distinct runs of L+ minus the audit")
        self.pairs = [tuple(pr) for pr in arr.tolist()]
        c["R"] = len(self.pairs)
        checked4 = steps.select_subset(range(len(self.pairs)), cfg.frac_s4a, self.rng("s4a"))
        req = ch.send(MsgType.REVEAL_REQUEST, {"step": "S4a", "items": checked4})
        rev = ch.recv(MsgType.REVEAL)
        runs = _flatten_pairs(self.pairs, checked4)
        self._check_reveal(rev, req, "S4a", _as_int_list(runs))
        A = np.array(rev.payload["settings"], dtype=np.int64)
        a = np.array(rev.payload["outcomes"], dtype=np.int64)
        if np.any(A[0::2] != A[1::2]) or np.any(a[0::2] == a[1::2]):
            raise CheckFailed("S4a", "constraint", "a pair breaks A1=A2, a1!=a2")
        rem = self.measure_alice_qubits(runs, A, self.rng("verify"))
        if np.any(rem != a):
            raise CheckFailed("S4a", "remeasure", f"{int(np.sum(rem != a))} qubits disagree")
        self._hardy_gate("S4a", A, a, self.B[runs], self.b[runs])

        # S5
        checked4_set = set(checked4)
        remaining = [i for i in range(len(self.pairs)) if i not in checked4_set]
        r_prime, _, _ = steps.s5_refine(self.B, self.pairs, remaining)
        r_prime = sorted(self.strategy.refine(self, remaining, r_prime))
        kept = set(r_prime)
        excluded = [i for i in remaining if i not in kept]
        self.r_prime = r_prime
        c["R_remaining"] = len(remaining)
        c["R_prime"] = len(r_prime)
        ch.send(MsgType.PAIR_SUBSET, {
            "r_prime": r_prime, "excluded": excluded,
            "settings": [[int(self.B[i1]), int(self.B[i2])] for i1, i2 in
                         (self.pairs[pid] for pid in excluded)]})

        req = ch.recv(MsgType.REVEAL_REQUEST)
        checked5 = _as_int_list(req.payload["items"])
        if req.payload["step"] != "S5a" or not set(checked5) <= kept:
            raise CheckFailed("S5a", "malformed", "audit request outside R'")
        runs = _flatten_pairs(self.pairs, checked5)
        ch.send(MsgType.REVEAL, {"step": "S5a", "request": req.seq, "runs": _as_int_list(runs),
                                 "settings": _as_int_list(self.strategy.reveal_bases(self, checked5, runs)),
                                 "outcomes": _as_int_list(self.claimed[runs])})

        # S6 / S7: nothing flows back to Alice from here on
        pid = int(ch.recv(MsgType.OT_INDEX).payload["pair"])
        if pid not in kept or pid in set(checked5):
            raise CheckFailed("S7", "invalid-index", f"pair {pid} is not a surviving R' pair",
                              local=True)
        i1, i2 = self.pairs[pid]
        qubits = [eigenstate(self.p, Setting(int(lab) // 2), Outcome.from_index(int(lab) % 2))
                  for lab in self.alice_labels[[i1, i2]]]
        bases = [int(self.B[i1]), int(self.B[i2])]
        self.decoded, outs = steps.s7_decode(qubits, bases, self.p, self.rng("s7"), cfg.encoding)
        self.s7_outcomes = [int(o) for o in outs]

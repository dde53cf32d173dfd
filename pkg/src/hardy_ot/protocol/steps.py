"""Stateless building blocks of the protocol steps.

Outcomes are the values +1/-1 and settings are 0 (U) / 1 (D) throughout, so the
arrays here line up with what travels on the wire.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from ..qcore import BasisParam, Outcome, ProbTable, Qubit, Setting, measure_qubit


class NoQualifyingPair(Exception):
    """No surviving pair carries the requested bit."""


class Violation(NamedTuple):
    index: int
    kind: str


# (A, a, B, b) combinations that never occur for the ideal state
HARDY_ZERO_CELLS = (
    (Setting.U, 1, Setting.D, 1),
    (Setting.D, 1, Setting.U, 1),
    (Setting.D, -1, Setting.D, -1),
)


def hardy_zero_mask(A, a, B, b) -> np.ndarray:
    A, a, B, b = (np.asarray(x) for x in (A, a, B, b))
    mask = np.zeros(A.shape, dtype=bool)
    for sa, oa, sb, ob in HARDY_ZERO_CELLS:
        mask |= (A == sa) & (a == oa) & (B == sb) & (b == ob)
    return mask


def cross_check(revealed: Sequence[tuple[int, int, int, int]] | np.ndarray,
                remeasured: Sequence[int] | None = None) -> list[Violation]:
    """Flag revealed ``(A, a, B, b)`` tuples that land on a Hardy-zero cell.

    If ``remeasured`` is given it holds the outcomes of re-measuring Alice's
    qubit in her announced basis; any disagreement with ``a`` is flagged too.
    """
    arr = np.asarray(revealed, dtype=np.int64).reshape(-1, 4)
    A, a, B, b = arr.T
    out = [Violation(int(i), "hardy") for i in np.flatnonzero(hardy_zero_mask(A, a, B, b))]
    if remeasured is not None:
        rem = np.asarray(remeasured, dtype=np.int64)
        out += [Violation(int(i), "remeasure") for i in np.flatnonzero(rem != a)]
    return out


def frequency_gate(observed_count: int, total: int, expected_p: float, z: float) -> bool:
    if total <= 0:
        raise ValueError("frequency gate needs at least one trial")
    sigma = math.sqrt(expected_p * (1.0 - expected_p) / total)
    return abs(observed_count / total - expected_p) <= z * sigma


def rate_gate(count: int, total: int, ceiling: float, z: float) -> bool:
    """One-sided gate: pass while the observed rate stays under ``ceiling``
    plus ``z`` binomial standard errors."""
    if total <= 0:
        return True
    sigma = math.sqrt(ceiling * (1.0 - ceiling) / total)
    return count / total <= ceiling + z * sigma


def s3_offer(run_ids: np.ndarray, outcomes: np.ndarray) -> list[int]:
    """Indices from ``run_ids`` whose (Bob) outcome is +1, ascending."""
    run_ids = np.asarray(run_ids, dtype=np.int64)
    keep = np.asarray(outcomes)[run_ids] == 1
    return np.sort(run_ids[keep]).tolist()


def make_pairs(settings: np.ndarray, outcomes: np.ndarray, candidates: Sequence[int],
               rng: np.random.Generator) -> list[tuple[int, int]]:
    """Maximal random pairing of same-setting, opposite-outcome runs.

    Within each setting group the smaller outcome class is paired in full,
    each run with a distinct partner drawn uniformly from the larger class.
    Member order inside a pair and the order of pairs are both randomized.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    settings = np.asarray(settings)
    outcomes = np.asarray(outcomes)
    chunks = []
    for s in (Setting.U, Setting.D):
        grp = cand[settings[cand] == s]
        plus = grp[outcomes[grp] == 1]
        minus = grp[outcomes[grp] == -1]
        small, big = (plus, minus) if len(plus) <= len(minus) else (minus, plus)
        if len(small) == 0:
            continue
        partners = rng.choice(big, size=len(small), replace=False)
        chunks.append(np.stack([small, partners], axis=1))
    if not chunks:
        return []
    pairs = np.concatenate(chunks)
    flip = rng.random(len(pairs)) < 0.5
    pairs[flip] = pairs[flip][:, ::-1]
    pairs = pairs[rng.permutation(len(pairs))]
    return [tuple(pr) for pr in pairs.tolist()]


def s5_refine(settings: np.ndarray, pairs: Sequence[tuple[int, int]],
              pair_ids: Sequence[int]) -> tuple[list[int], list[int], list[list[int]]]:
    """Split ``pair_ids`` by whether Bob's two settings differ.

    Returns ``(r_prime, excluded, excluded_settings)``.
    """
    settings = np.asarray(settings)
    ids = np.asarray(pair_ids, dtype=np.int64)
    if ids.size == 0:
        return [], [], []
    members = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)[ids]
    bb = settings[members]
    diff = bb[:, 0] != bb[:, 1]
    return ids[diff].tolist(), ids[~diff].tolist(), bb[~diff].tolist()


def s6_encode(bit: int, candidates: Sequence[int], pair_settings: Sequence[int],
              encoding: Sequence[int], rng: np.random.Generator) -> int:
    """Pick uniformly among surviving pairs whose shared setting encodes ``bit``."""
    qualifying = [int(pid) for pid, s in zip(candidates, pair_settings)
                  if encoding[int(s)] == int(bit)]
    if not qualifying:
        raise NoQualifyingPair(f"no surviving pair encodes bit {bit}")
    return qualifying[int(rng.integers(len(qualifying)))]


def s7_decode(alice_qubits: Sequence[Qubit], bob_settings: Sequence[int], p: BasisParam,
              rng: np.random.Generator, encoding: Sequence[int] = (0, 1)
              ) -> tuple[int | None, tuple[Outcome, Outcome]]:
    """Measure each of Alice's qubits in Bob's setting for that run.

    A -1 at position ``j`` means Alice's shared setting was the complement of
    Bob's setting there. Two -1 outcomes (impossible without noise) are
    ambiguous and decode to nothing.
    """
    outcomes = tuple(measure_qubit(q, p, Setting(s), rng) for q, s in zip(alice_qubits, bob_settings))
    minus = [j for j, o in enumerate(outcomes) if o is Outcome.MINUS]
    if len(minus) != 1:
        return None, outcomes  # type: ignore[return-value]
    alice_setting = Setting(int(bob_settings[minus[0]])).complement
    return encoding[int(alice_setting)], outcomes  # type: ignore[return-value]


# --- expected list statistics ----------------------------------------------

def bob_plus_rate(table: ProbTable) -> float:
    return float(table.cells[:, :, :, 0].sum() / 4.0)


def pair_diff_probability(table: ProbTable, s: Setting) -> float:
    """Chance that Bob's settings differ on an honest pair of Alice setting ``s``.

    Members are conditioned on Bob's +1 and on Alice's outcome (+1 for one
    member, -1 for the other); Bob's setting was uniform.
    """
    plus = table.cells[int(s), :, 0, 0]
    minus = table.cells[int(s), :, 1, 0]
    w_plus = plus / plus.sum()
    w_minus = minus / minus.sum()
    return float(1.0 - np.dot(w_plus, w_minus))


def expected_rprime_fraction(table: ProbTable, pair_settings: Sequence[int]) -> float:
    pair_settings = np.asarray(pair_settings, dtype=np.int64)
    if pair_settings.size == 0:
        raise ValueError("no pairs")
    pd = np.array([pair_diff_probability(table, Setting.U), pair_diff_probability(table, Setting.D)])
    return float(pd[pair_settings].mean())


def pair_class_rates(table: ProbTable) -> dict[Setting, tuple[float, float]]:
    """Per-run probabilities of landing in each (setting, outcome) class of L+.

    ``{s: (rate of a=+1, rate of a=-1)}`` with Alice's and Bob's settings uniform.
    """
    c = table.cells
    return {s: (float(c[int(s), :, 0, 0].sum() / 4.0), float(c[int(s), :, 1, 0].sum() / 4.0))
            for s in (Setting.U, Setting.D)}


def select_subset(items: Sequence[int], fraction: float, rng: np.random.Generator) -> list[int]:
    items = np.asarray(items, dtype=np.int64)
    k = int(round(fraction * len(items)))
    if k == 0:
        return []
    return np.sort(rng.choice(items, size=k, replace=False)).tolist()

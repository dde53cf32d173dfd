"""Noise-robustness and finite-sample arithmetic for the CH-form Hardy test.

Standard deviations here follow the coarse ``sigma = 1/sqrt(N)`` convention,
with a faithfulness factor ``z * sqrt(k)`` for a test built from ``k`` joint
probabilities (``z=3``, ``k=4`` gives the factor 6).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .qcore import Q_MAX, ProbTable, ch_lhs

DEFAULT_Z = 3.0
DEFAULT_N_PROBS = 4


class InfeasibleVisibility(ValueError):
    """No finite run count reaches the requested reliability at this visibility."""


@dataclass(frozen=True)
class NoiseAnalysis:
    q: float
    eta: float
    ch_value: float
    eta_min: float
    runs_required: int | None

    @classmethod
    def for_params(cls, eta: float, q: float = Q_MAX) -> "NoiseAnalysis":
        eta_min = min_visibility(q)
        try:
            runs = min_runs(eta, q)
        except InfeasibleVisibility:
            runs = None
        return cls(q=q, eta=eta, ch_value=werner_ch_value(eta, q), eta_min=eta_min,
                   runs_required=runs)


@dataclass(frozen=True)
class CurvePoint:
    n_runs: int
    eta_min: float


def werner_ch_value(eta: float, q: float) -> float:
    return eta * q - (1.0 - eta) / 2.0


def deterministic_table(a_u: int, a_d: int, b_u: int, b_d: int) -> ProbTable:
    """Joint table of the local strategy assigning fixed outcomes to each setting."""
    cells = np.zeros((2, 2, 2, 2))
    alice = (a_u, a_d)
    bob = (b_u, b_d)
    for sa in range(2):
        for sb in range(2):
            ia = 0 if alice[sa] == 1 else 1
            ib = 0 if bob[sb] == 1 else 1
            cells[sa, sb, ia, ib] = 1.0
    return ProbTable(cells)


def local_strategies() -> list[tuple[int, int, int, int]]:
    return list(itertools.product((1, -1), repeat=4))


def lr_max() -> float:
    """Maximum of the CH expression over all 16 deterministic local strategies."""
    return max(ch_lhs(deterministic_table(*s)) for s in local_strategies())


def min_visibility(q: float) -> float:
    if not (0.0 < q <= Q_MAX + 1e-15):
        raise ValueError(f"q must lie in (0, q_max], got {q!r}")
    return 1.0 / (1.0 + 2.0 * q)


def _factor(z: float, n_probs: int) -> float:
    return z * math.sqrt(n_probs)


def min_runs(eta: float, q: float, z: float = DEFAULT_Z, n_probs: int = DEFAULT_N_PROBS) -> int:
    """Smallest integer N with ``eta*(2q+1) - 1 > 2*z*sqrt(k)/sqrt(N)``."""
    gap = eta * (2.0 * q + 1.0) - 1.0
    if gap <= 0.0:
        raise InfeasibleVisibility(
            f"eta={eta} does not exceed the threshold {min_visibility(q):.6f}"
        )
    bound = (2.0 * _factor(z, n_probs) / gap) ** 2
    n = math.floor(bound) + 1
    # floor() on a rounded bound can land one off when the bound is an integer
    while n > 1 and reliability_margin(eta, q, n - 1, z, n_probs) > 0:
        n -= 1
    while reliability_margin(eta, q, n, z, n_probs) <= 0:
        n += 1
    return n


def reliability_margin(
    eta: float, q: float, n: int, z: float = DEFAULT_Z, n_probs: int = DEFAULT_N_PROBS
) -> float:
    if n < 1:
        raise ValueError("n must be positive")
    return werner_ch_value(eta, q) - _factor(z, n_probs) / math.sqrt(n)


def eta_min_at(n: float, q: float, z: float = DEFAULT_Z, n_probs: int = DEFAULT_N_PROBS) -> float:
    return (1.0 + 2.0 * _factor(z, n_probs) / math.sqrt(n)) / (2.0 * q + 1.0)


def figure1_curve(
    q: float = Q_MAX,
    n_min: int | None = None,
    n_max: int = 10**8,
    steps: int = 200,
    z: float = DEFAULT_Z,
    n_probs: int = DEFAULT_N_PROBS,
) -> list[CurvePoint]:
    """Minimum visibility against run count on a log grid (distinct integers)."""
    lowest = min_runs(1.0, q, z, n_probs)
    if n_min is None:
        n_min = lowest
    if n_min < lowest:
        raise ValueError(f"n_min must be at least {lowest} for eta_min < 1")
    if n_max <= n_min:
        raise ValueError("n_max must exceed n_min")
    grid = np.unique(np.rint(np.geomspace(n_min, n_max, steps)).astype(np.int64))
    return [CurvePoint(int(n), min(1.0, eta_min_at(int(n), q, z, n_probs))) for n in grid]


def curve_csv(points: list[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_runs", "eta_min"])
    for pt in points:
        w.writerow([pt.n_runs, f"{pt.eta_min:.9f}"])
    return buf.getvalue()

"""Exact two-qubit kernel: measurement bases, the Hardy state, Werner noise,
Born-rule tables and seeded outcome sampling.

Conventions
-----------
Amplitudes are real. ``|u> = (1, 0)`` and ``|u_perp> = (0, 1)``; the first
tensor factor is Alice's qubit, the second Bob's. Outcome index 0 means +1 and
index 1 means -1 everywhere arrays are indexed by outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

ATOL = 1e-12
PSD_ATOL = 1e-10

GOLDEN_ALPHA2 = (math.sqrt(5.0) - 1.0) / 2.0
Q_MAX = (5.0 * math.sqrt(5.0) - 11.0) / 2.0


class Setting(IntEnum):
    U = 0
    D = 1

    @property
    def complement(self) -> "Setting":
        return Setting(1 - self)


class Outcome(IntEnum):
    PLUS = 1
    MINUS = -1

    @property
    def index(self) -> int:
        return 0 if self is Outcome.PLUS else 1

    @classmethod
    def from_index(cls, idx: int) -> "Outcome":
        return cls.PLUS if idx == 0 else cls.MINUS


@dataclass(frozen=True)
class BasisParam:
    """Real overlap ``alpha = <u|d>`` of the two measurement bases."""

    alpha: float

    def __post_init__(self) -> None:
        a = float(self.alpha)
        if not (0.0 < a < 1.0) or math.isnan(a):
            raise ValueError(f"alpha must lie strictly inside (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def from_alpha2(cls, alpha2: float) -> "BasisParam":
        if not (0.0 < alpha2 < 1.0):
            raise ValueError(f"alpha^2 must lie strictly inside (0, 1), got {alpha2!r}")
        return cls(math.sqrt(alpha2))

    @classmethod
    def golden(cls) -> "BasisParam":
        """The basis angle that maximizes Hardy's success probability."""
        return cls.from_alpha2(GOLDEN_ALPHA2)

    @property
    def alpha2(self) -> float:
        return self.alpha * self.alpha

    @property
    def beta(self) -> float:
        return math.sqrt(1.0 - self.alpha2)


@dataclass(frozen=True, eq=False)
class Qubit:
    amps: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.amps, dtype=float).reshape(2)
        if abs(float(v @ v) - 1.0) > ATOL:
            raise ValueError("qubit must have unit norm")
        v.setflags(write=False)
        object.__setattr__(self, "amps", v)

    def overlap2(self, other: "Qubit") -> float:
        return float(self.amps @ other.amps) ** 2

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Qubit) and bool(np.allclose(self.amps, other.amps, atol=ATOL))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class PureState2Q:
    amps: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.amps, dtype=float).reshape(4)
        if abs(float(v @ v) - 1.0) > ATOL:
            raise ValueError("two-qubit state must have unit norm")
        v.setflags(write=False)
        object.__setattr__(self, "amps", v)

    def density(self) -> "DensityMatrix2Q":
        return DensityMatrix2Q(np.outer(self.amps, self.amps))


@dataclass(frozen=True, eq=False)
class DensityMatrix2Q:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float).reshape(4, 4)
        if not np.allclose(m, m.T, atol=ATOL):
            raise ValueError("density matrix must be Hermitian")
        if abs(float(np.trace(m)) - 1.0) > ATOL:
            raise ValueError("density matrix must have unit trace")
        if float(np.linalg.eigvalsh(m).min()) < -PSD_ATOL:
            raise ValueError("density matrix must be positive semidefinite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix))


@dataclass(frozen=True, eq=False)
class ProbTable:
    """Joint distributions ``P(a, b | sa, sb)`` for all four setting pairs.

    ``cells[sa, sb, ia, ib]`` with outcome index 0 for +1 and 1 for -1.
    """

    cells: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.cells, dtype=float).reshape(2, 2, 2, 2)
        if c.min() < -PSD_ATOL or c.max() > 1.0 + PSD_ATOL:
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.allclose(c.sum(axis=(2, 3)), 1.0, atol=1e-10):
            raise ValueError("each setting pair must sum to 1")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)

    def p(self, a: int, b: int, sa: Setting, sb: Setting) -> float:
        return float(self.cells[sa, sb, Outcome(a).index, Outcome(b).index])

    def pair(self, sa: Setting, sb: Setting) -> np.ndarray:
        return self.cells[sa, sb]

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "ProbTable":
        """Empirical table from a ``(2, 2, 2, 2)`` array of event counts."""
        counts = np.asarray(counts, dtype=float)
        totals = counts.sum(axis=(2, 3), keepdims=True)
        if np.any(totals == 0):
            raise ValueError("every setting pair needs at least one observation")
        return cls(counts / totals)


# --- bases -----------------------------------------------------------------

def build_bases(p: BasisParam) -> tuple[Qubit, Qubit, Qubit, Qubit]:
    """Return ``(u, u_perp, d, d_perp)``."""
    a, b = p.alpha, p.beta
    return (
        Qubit(np.array([1.0, 0.0])),
        Qubit(np.array([0.0, 1.0])),
        Qubit(np.array([a, b])),
        Qubit(np.array([b, -a])),
    )


def eigenvectors(p: BasisParam) -> np.ndarray:
    """Rows are the four eigenstates in label order ``2*setting + outcome_index``:
    u, u_perp, d, d_perp."""
    a, b = p.alpha, p.beta
    return np.array([[1.0, 0.0], [0.0, 1.0], [a, b], [b, -a]])


def eigenstate(p: BasisParam, s: Setting, o: Outcome) -> Qubit:
    return Qubit(eigenvectors(p)[qubit_label(s, o)])


def qubit_label(s: Setting, o: Outcome) -> int:
    return 2 * int(s) + Outcome(o).index


def _projectors(p: BasisParam) -> np.ndarray:
    vecs = eigenvectors(p)
    return np.einsum("ki,kj->kij", vecs, vecs).reshape(2, 2, 2, 2)


# --- states ----------------------------------------------------------------

def hardy_state(p: BasisParam) -> PureState2Q:
    a, b = p.alpha, p.beta
    a2 = p.alpha2
    root = math.sqrt(1.0 - a2 * a2)
    c1 = -a2 * b / (a2 * root)
    c2 = b * a2 / root
    c3 = a * b * b / root
    _, u_perp, d, d_perp = (q.amps for q in build_bases(p))
    u = np.array([1.0, 0.0])
    amps = c1 * np.kron(d, u_perp) + c2 * np.kron(d_perp, u) + c3 * np.kron(d_perp, u_perp)
    return PureState2Q(amps)


def hardy_q(p: BasisParam) -> float:
    a2 = p.alpha2
    return a2 * a2 * (1.0 - a2) / (1.0 + a2)


def werner_state(p: BasisParam, eta: float) -> DensityMatrix2Q:
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"visibility must lie in [0, 1], got {eta!r}")
    psi = hardy_state(p).amps
    return DensityMatrix2Q(eta * np.outer(psi, psi) + (1.0 - eta) / 4.0 * np.eye(4))


def _as_density(state: PureState2Q | DensityMatrix2Q | np.ndarray) -> np.ndarray:
    if isinstance(state, PureState2Q):
        return np.outer(state.amps, state.amps)
    if isinstance(state, DensityMatrix2Q):
        return state.matrix
    arr = np.asarray(state, dtype=float)
    return np.outer(arr, arr) if arr.shape == (4,) else arr.reshape(4, 4)


# --- Born rule -------------------------------------------------------------

def joint_distribution(state, p: BasisParam, sa: Setting, sb: Setting) -> np.ndarray:
    """``P[ia, ib] = Tr[(Pi_a^sa x Pi_b^sb) rho]`` as a 2x2 array."""
    rho = _as_density(state).reshape(2, 2, 2, 2)
    proj = _projectors(p)
    return np.einsum("aij,bkl,jlik->ab", proj[sa], proj[sb], rho)


def probability_table(state, p: BasisParam) -> ProbTable:
    rho = _as_density(state).reshape(2, 2, 2, 2)
    proj = _projectors(p)
    cells = np.einsum("xaij,ybkl,jlik->xyab", proj, proj, rho)
    return ProbTable(cells)


def alice_conditionals(state, p: BasisParam) -> tuple[np.ndarray, np.ndarray]:
    """Alice's marginals and Bob's post-measurement states.

    Returns ``(p_alice, rho_bob)`` where ``p_alice[k]`` is the probability of
    Alice's outcome for eigenstate label ``k`` given her setting ``k // 2``,
    and ``rho_bob[k]`` is Bob's normalized 2x2 state after that outcome.
    Labels with zero probability get the maximally mixed state.
    """
    rho = _as_density(state).reshape(2, 2, 2, 2)
    vecs = eigenvectors(p)
    # <x| rho |x> traced over Alice: unnormalized Bob blocks
    blocks = np.einsum("ki,imjl,kj->kml", vecs, rho, vecs)
    probs = np.trace(blocks, axis1=1, axis2=2)
    out = np.empty_like(blocks)
    for k in range(4):
        out[k] = blocks[k] / probs[k] if probs[k] > ATOL else np.eye(2) / 2.0
    return probs, out


def plus_probability(rho_1q: np.ndarray, p: BasisParam, s: Setting) -> float:
    x = eigenvectors(p)[2 * int(s)]
    return float(x @ np.asarray(rho_1q) @ x)


def measure_qubit(q: Qubit, p: BasisParam, s: Setting, rng: np.random.Generator) -> Outcome:
    x = eigenvectors(p)[2 * int(s)]
    p_plus = float(q.amps @ x) ** 2
    return Outcome.PLUS if rng.random() < p_plus else Outcome.MINUS


def sample_run(
    state, p: BasisParam, sa: Setting, sb: Setting, rng: np.random.Generator
) -> tuple[Outcome, Outcome, Qubit]:
    probs = joint_distribution(state, p, sa, sb).ravel()
    cell = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    cell = min(cell, 3)
    a, b = Outcome.from_index(cell // 2), Outcome.from_index(cell % 2)
    return a, b, eigenstate(p, sa, a)


# --- vectorized kernels used by the protocol ---------------------------------

# label_overlap2[k, s] = |<+ eigenstate of s | eigenstate k>|^2
def label_plus_probs(p: BasisParam) -> np.ndarray:
    vecs = eigenvectors(p)
    plus = vecs[[0, 2]]
    return (vecs @ plus.T) ** 2


def measure_labels(
    labels: np.ndarray, settings: np.ndarray, p: BasisParam, rng: np.random.Generator
) -> np.ndarray:
    """Measure eigenstate-labelled qubits; returns outcome indices (0 for +1)."""
    labels = np.asarray(labels, dtype=np.int64)
    settings = np.asarray(settings, dtype=np.int64)
    p_plus = label_plus_probs(p)[labels, settings]
    return (rng.random(labels.shape[0]) >= p_plus).astype(np.int8)


def measure_states(
    plus_table: np.ndarray, index: np.ndarray, settings: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Measure qubits given by ``plus_table[index, setting]`` (+1 probability)."""
    p_plus = np.asarray(plus_table)[np.asarray(index), np.asarray(settings)]
    return (rng.random(p_plus.shape[0]) >= p_plus).astype(np.int8)


def plus_table(rho_bob: np.ndarray, p: BasisParam) -> np.ndarray:
    """``out[k, s]``: +1 probability measuring Bob state ``k`` in setting ``s``."""
    plus = eigenvectors(p)[[0, 2]]
    return np.einsum("si,kij,sj->ks", plus, np.asarray(rho_bob), plus)


# --- Hardy tests -----------------------------------------------------------

def hardy_zero_cells(t: ProbTable) -> tuple[float, float, float]:
    """The cells that vanish for the ideal state: (+,+|U,D), (+,+|D,U), (-,-|D,D)."""
    c = t.cells
    return float(c[0, 1, 0, 0]), float(c[1, 0, 0, 0]), float(c[1, 1, 1, 1])


def check_hardy(t: ProbTable, epsilon: float, q: float) -> bool:
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    succ = float(t.cells[0, 0, 0, 0])
    if not succ > q - 3.0 * epsilon - ATOL:
        return False
    return all(cell <= epsilon + ATOL for cell in hardy_zero_cells(t))


def ch_lhs(t: ProbTable) -> float:
    c = t.cells
    return float(c[0, 0, 0, 0] - c[0, 1, 0, 0] - c[1, 0, 0, 0] - c[1, 1, 1, 1])


def bob_plus_marginal(t: ProbTable) -> float:
    """Bob's +1 probability with both settings chosen uniformly."""
    return float(t.cells[:, :, :, 0].sum() / 4.0)

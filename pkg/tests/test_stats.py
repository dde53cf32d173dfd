import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hardy_ot import stats
from hardy_ot.qcore import Q_MAX, BasisParam, ProbTable, ch_lhs, hardy_q, hardy_state, probability_table, werner_state


def test_lr_bound_exhaustive():
    assert stats.lr_max() == 0.0
    # all outcomes +1: P(+,+) is 1 for every setting pair
    assert ch_lhs(stats.deterministic_table(1, 1, 1, 1)) == -1.0
    assert len(stats.local_strategies()) == 16


def test_lr_bound_mixtures():
    rng = np.random.default_rng(0)
    tables = np.stack([stats.deterministic_table(*s).cells for s in stats.local_strategies()])
    w = rng.dirichlet(np.ones(16), size=10_000)
    mixed = np.einsum("ns,sabcd->nabcd", w, tables)
    lhs = mixed[:, 0, 0, 0, 0] - mixed[:, 0, 1, 0, 0] - mixed[:, 1, 0, 0, 0] - mixed[:, 1, 1, 1, 1]
    assert lhs.max() <= 1e-12
    g = BasisParam.golden()
    assert ch_lhs(probability_table(hardy_state(g), g)) == pytest.approx(0.090170, abs=1e-6)


class TestVisibility:
    def test_values(self):
        assert stats.min_visibility(Q_MAX) == pytest.approx(0.847214, abs=1e-6)
        assert stats.min_visibility(0.05) == pytest.approx(0.909091, abs=1e-6)
        assert stats.min_visibility(1e-9) == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("q", [0.0, -0.1, 0.1])
    def test_rejects(self, q):
        with pytest.raises(ValueError):
            stats.min_visibility(q)

    @given(st.floats(0.01, 1 - 0.01), st.floats(0.0, 1.0))
    def test_werner_identity_and_threshold(self, a2, eta):
        p = BasisParam.from_alpha2(a2)
        q = hardy_q(p)
        value = ch_lhs(probability_table(werner_state(p, eta), p))
        assert value == pytest.approx(stats.werner_ch_value(eta, q), abs=1e-12)
        if abs(eta - stats.min_visibility(q)) > 1e-9:
            assert (value > 0) == (eta > stats.min_visibility(q))


class TestMinRuns:
    def test_integers(self):
        assert stats.min_runs(1.0, Q_MAX) == 4428
        assert stats.min_runs(0.95, Q_MAX) == 9784

    def test_infeasible(self):
        with pytest.raises(stats.InfeasibleVisibility):
            stats.min_runs(stats.min_visibility(Q_MAX), Q_MAX)
        with pytest.raises(stats.InfeasibleVisibility):
            stats.min_runs(0.8, Q_MAX)

    def test_margin_values(self):
        m = stats.reliability_margin(1.0, Q_MAX, 4428)
        assert 0 < m == pytest.approx(2.98e-6, rel=0.01)
        assert stats.reliability_margin(1.0, Q_MAX, 4427) < 0
        for n in (1, 100, 10**6, 10**12):
            assert stats.reliability_margin(0.8, Q_MAX, n) < 0
        with pytest.raises(ValueError):
            stats.reliability_margin(1.0, Q_MAX, 0)

    @pytest.mark.parametrize("eta", np.linspace(0.86, 1.0, 8))
    @pytest.mark.parametrize("q", [0.03, 0.06, Q_MAX])
    def test_inversion(self, eta, q):
        if eta <= stats.min_visibility(q):
            with pytest.raises(stats.InfeasibleVisibility):
                stats.min_runs(eta, q)
            return
        n = stats.min_runs(eta, q)
        assert stats.reliability_margin(eta, q, n) > 0
        assert stats.reliability_margin(eta, q, n - 1) <= 0

    def test_noise_analysis(self):
        na = stats.NoiseAnalysis.for_params(0.95)
        assert na.runs_required == 9784
        assert na.ch_value == pytest.approx(0.95 * Q_MAX - 0.025, abs=1e-12)
        assert stats.NoiseAnalysis.for_params(0.8).runs_required is None


class TestCurve:
    def test_shape(self):
        pts = stats.figure1_curve(Q_MAX)
        eta = np.array([p.eta_min for p in pts])
        n = np.array([p.n_runs for p in pts])
        assert n[0] == 4428 and n[-1] == 10**8
        assert np.all(np.diff(eta) < 0) and np.all(np.diff(n) > 0)
        assert 0.99999 < eta[0] <= 1.0
        # closed form at 1e8: (1 + 12e-4) * eta_inf
        assert eta[-1] == pytest.approx(0.847214 * 1.0012, abs=1e-6)
        assert eta[-1] > stats.min_visibility(Q_MAX)

    def test_through_9784(self):
        (pt,) = stats.figure1_curve(Q_MAX, n_min=9784, n_max=10**6, steps=2)[:1]
        assert pt.eta_min == pytest.approx(0.95, abs=1e-4)

    def test_rejects_infeasible_start(self):
        with pytest.raises(ValueError):
            stats.figure1_curve(Q_MAX, n_min=1000)

    def test_csv(self):
        text = stats.curve_csv(stats.figure1_curve(Q_MAX, steps=10))
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["n_runs", "eta_min"]
        assert all(math.isfinite(float(r[1])) for r in rows[1:])


def test_empirical_table_from_counts():
    counts = np.full((2, 2, 2, 2), 25)
    assert ch_lhs(ProbTable.from_counts(counts)) == pytest.approx(-0.5)

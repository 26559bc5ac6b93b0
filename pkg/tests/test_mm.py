from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobsf.errors import BracketError, UnsupportedModelError, ValidationError
from lobsf.mm import (
    AlphaModel,
    F_a,
    M_and_m,
    MCache,
    MMModel,
    alpha_path,
    expected_profit,
    hamiltonian_check,
    microscopic_inventory,
    optimal_spread,
    simulate_mm,
)
from lobsf.stochastic import SamplePath, TimeGrid

SQ2PI = math.sqrt(2 * math.pi)
EXPLICIT = MMModel.explicit()


def brute_force(model, a, hi=60.0, n=1_000_001):
    """Dense scan plus a parabolic vertex through the best three points."""
    x = np.linspace(0.0, hi, n)
    F = F_a(model, a, x)
    i = int(np.argmax(F))
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    f0, f1, f2 = F[i - 1], F[i], F[i + 1]
    h = x1 - x0
    return x1 + 0.5 * h * (f0 - f2) / (f0 - 2 * f1 + f2)


class TestF:
    def test_at_zero(self):
        for a in (0.5, 1.0, 3.0):
            assert F_a(EXPLICIT, a, 0.0) == pytest.approx(-a)

    def test_arithmetic(self):
        assert F_a(EXPLICIT, 0.0, 1.0) == pytest.approx(0.25 / SQ2PI)
        assert F_a(EXPLICIT, 0.0, 1.0) == pytest.approx(0.0997, abs=1e-4)

    def test_no_correlation(self):
        model = MMModel(EXPLICIT.f, lambda x: 0.0 * np.asarray(x))
        r = M_and_m(model, -1.0)
        # x/(1+x)^2 peaks at x = 1
        assert r.m == pytest.approx(1.0, abs=1e-7) and r.nonpositive_a


class TestM:
    @pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
    def test_against_scan(self, a):
        assert M_and_m(EXPLICIT, a).m == pytest.approx(brute_force(EXPLICIT, a), abs=1e-6)

    def test_decreasing(self):
        M = [M_and_m(EXPLICIT, a).M for a in (0.5, 1.0, 2.0)]
        assert M[2] < M[1] < M[0]

    def test_positivity(self):
        r = M_and_m(EXPLICIT, 1.0)
        assert r.m > 0
        assert r.M >= float(F_a(EXPLICIT, 1.0, 2.0)) > 0

    def test_analytic_maximizer(self):
        for a in (0.25, 1.0, 4.0):
            assert M_and_m(EXPLICIT, a).m == pytest.approx(math.sqrt(1 + 3 * SQ2PI * a), abs=1e-6)

    def test_dropped_convention(self):
        model = MMModel.explicit(drop_sqrt_2pi=True)
        for a in (0.5, 1.0, 2.0):
            assert M_and_m(model, a).m == pytest.approx(math.sqrt(1 + 3 * a), abs=1e-6)

    def test_bracket_failure(self):
        # x f(x) never decays, so no compact interval contains the maximum
        model = MMModel(lambda x: 1.0 / (1.0 + np.asarray(x, dtype=float)), lambda x: 0.0 * np.asarray(x))
        with pytest.raises(BracketError):
            M_and_m(model, 1.0, max_doublings=10)

    def test_tie_smallest(self):
        # flat plateau of F on [1, 2]: the smallest maximizer is reported
        f = lambda x: np.where(np.asarray(x) < 1, 1.0, np.where(np.asarray(x) <= 2, 1.0 / np.maximum(x, 1e-300),
                                                                   0.5 * np.exp(-(np.asarray(x) - 2))))
        model = MMModel(lambda x: np.asarray(f(x), dtype=float), lambda x: 0.0 * np.asarray(x), drop_sqrt_2pi=True)
        r = M_and_m(model, 1.0)
        assert r.M == pytest.approx(1.0, abs=1e-9)
        assert r.m == pytest.approx(1.0, abs=1e-3)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.05, 8), st.floats(0.05, 8))
    def test_monotone_properties(self, a, b):
        lo, hi = sorted((a, b))
        ra, rb = M_and_m(EXPLICIT, lo), M_and_m(EXPLICIT, hi)
        assert rb.M <= ra.M + 1e-12
        assert rb.m >= ra.m - 1e-7

    def test_m_increasing_grid(self):
        a = np.linspace(0.1, 10, 40)
        m = [M_and_m(EXPLICIT, x).m for x in a]
        assert np.all(np.diff(m) >= 0)

    def test_cache_interpolates(self):
        cache = MCache(EXPLICIT, 0.5, 2.0)
        a = np.array([0.7, 1.3, 1.9])
        np.testing.assert_allclose(cache.m(a), [M_and_m(EXPLICIT, x).m for x in a], atol=1e-5)
        cache.m(np.array([5.0]))
        assert cache.hi >= 5.0


class TestValidation:
    def test_explicit_valid(self):
        assert EXPLICIT.violations() == []

    def test_rho_out_of_range(self):
        bad = MMModel(EXPLICIT.f, lambda x: 2.0 + 0 * np.asarray(x))
        assert any("rho ∉ [0,1]" in v for v in bad.violations())
        with pytest.raises(ValidationError):
            bad.validate()

    def test_f_nonpositive(self):
        bad = MMModel(lambda x: 1.0 - np.asarray(x), EXPLICIT.rho)
        assert bad.violations()


class TestAlpha:
    def test_martingale(self):
        am = AlphaModel("martingale", 1.0, 0.3)
        p = SamplePath(TimeGrid(1.0, 10), np.linspace(100, 101, 11))
        np.testing.assert_array_equal(alpha_path(am, p), 1.0)

    def test_bs_zero_drift(self):
        am = AlphaModel("black_scholes", 1.0, 0.2, mu=0.0)
        p = SamplePath(TimeGrid(1.0, 10), np.linspace(100, 120, 11))
        np.testing.assert_allclose(alpha_path(am, p), 1.0)

    def test_bs_positive_drift(self):
        am = AlphaModel("black_scholes", 1.0, 0.2, mu=0.05)
        a = alpha_path(am, SamplePath(TimeGrid(1.0, 10), np.full(11, 100.0)))
        assert np.all(a[:-1] > 1) and a[-1] == pytest.approx(1.0)

    def test_ou_at_mean(self):
        am = AlphaModel("ou", 2.0, 0.3, p0=50.0, kappa=1.5)
        t = np.linspace(0, 2, 9)
        np.testing.assert_allclose(am.alpha(t, 50.0), np.exp(-1.5 * (2 - t)))

    def test_unsupported(self):
        with pytest.raises(UnsupportedModelError):
            AlphaModel("heston", 1.0, 0.2)


class TestPolicy:
    def test_martingale_linear_in_vol(self):
        sig = np.array([0.1, 0.2, 0.5])
        pol = optimal_spread(EXPLICIT, np.ones(3), sig)
        np.testing.assert_allclose(pol.spread, M_and_m(EXPLICIT, 1.0).m * sig)

    @given(st.floats(0.1, 10))
    def test_scale_equivariance(self, k):
        alpha = np.array([0.5, 1.0, 1.5])
        sig = np.array([0.2, 0.3, 0.4])
        a = optimal_spread(EXPLICIT, alpha, sig)
        b = optimal_spread(EXPLICIT, alpha, k * sig)
        np.testing.assert_allclose(b.spread, k * a.spread, rtol=1e-12)
        np.testing.assert_allclose(b.ratio, a.ratio, rtol=1e-12)

    def test_bs_spreads_exceed_martingale(self):
        am = AlphaModel("black_scholes", 1.0, 0.2, mu=0.05)
        grid = TimeGrid(1.0, 50)
        alpha = am.alpha(grid.nodes[:-1], 100.0)
        pol = optimal_spread(EXPLICIT, alpha, np.full(50, 20.0))
        assert np.all(pol.spread > M_and_m(EXPLICIT, 1.0).m * 20.0)

    def test_hamiltonian(self):
        alpha = np.linspace(0.3, 3.0, 64)
        pol = optimal_spread(EXPLICIT, alpha, np.full(64, 0.3))
        assert hamiltonian_check(EXPLICIT, pol) <= 1e-9

    def test_invalid(self):
        with pytest.raises(ValidationError):
            optimal_spread(EXPLICIT, [1.0], [0.0])
        with pytest.raises(ValidationError):
            optimal_spread(EXPLICIT, [np.nan], [1.0])

    def test_csv(self, tmp_path):
        pol = optimal_spread(EXPLICIT, np.ones(4), np.full(4, 0.3), t=np.arange(4) / 4)
        pol.to_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,alpha,s,sigma,inv_vol"


class TestSimulation:
    def test_martingale_profit_and_inventory(self):
        am = AlphaModel("martingale", 1.0, 0.3)
        r = simulate_mm(EXPLICIT, am, TimeGrid(1.0, 200), 4000, seed=2)
        assert abs(r.mean_pnl - r.theory) < 3 * r.pnl_se
        assert abs(r.mean_dL) < 3 * r.dL_se
        assert r.mean_covariation < 0

    def test_withdrawn_maker(self):
        # enormous spreads: fills vanish
        model = MMModel(lambda x: 1e-12 / (1 + np.asarray(x)) ** 2, EXPLICIT.rho)
        r = simulate_mm(model, AlphaModel("martingale", 1.0, 0.3), TimeGrid(1.0, 50), 200, seed=1)
        assert abs(r.mean_pnl) < 1e-9 and abs(r.mean_dL) < 1e-9

    def test_deterministic(self):
        am = AlphaModel("ou", 1.0, 0.3, kappa=1.0)
        a = simulate_mm(EXPLICIT, am, TimeGrid(1.0, 50), 300, seed=4)
        b = simulate_mm(EXPLICIT, am, TimeGrid(1.0, 50), 300, seed=4, threads=3, chunk=64)
        assert a.to_json() == b.to_json()


class TestExpectedProfit:
    def test_martingale(self):
        am = AlphaModel("martingale", 2.0, 0.4)
        assert expected_profit(EXPLICIT, am) == pytest.approx(M_and_m(EXPLICIT, 1.0).M * 0.16 * 2.0, rel=1e-14)

    def test_ou_mean_path_rate(self):
        am = AlphaModel("ou", 1.0, 0.3, kappa=2.0)
        t = np.linspace(0, 1, 11)
        a = am.alpha(t, am.p0)
        M1 = M_and_m(EXPLICIT, 1.0).M
        assert all(M_and_m(EXPLICIT, x).M * 0.09 >= M1 * 0.09 for x in a)

    def test_ou_quadrature_vs_mc(self):
        am = AlphaModel("ou", 1.0, 0.3, kappa=1.0)
        q = expected_profit(EXPLICIT, am)
        mc = expected_profit(EXPLICIT, am, method="mc", paths=4000, steps=100)
        assert mc == pytest.approx(q, rel=2e-3)

    def test_bs_quadrature_vs_mc(self):
        am = AlphaModel("black_scholes", 1.0, 0.2, mu=0.05)
        assert expected_profit(EXPLICIT, am, method="mc", paths=20000, steps=50) == pytest.approx(
            expected_profit(EXPLICIT, am), rel=1e-2)

    def test_zero_vol_limit(self):
        am = AlphaModel("martingale", 1.0, 1e-150)
        assert expected_profit(EXPLICIT, am) == pytest.approx(0.0, abs=1e-290)


class TestMicroscopic:
    @pytest.mark.parametrize("rho,f", [(0.3, 0.5), (0.8, 2.0), (1.0, 1.0)])
    def test_predictable_sums(self, rho, f):
        sigma, n = 0.7, 200_000
        rng = np.random.default_rng(1)
        dp = sigma * math.sqrt(1.0 / n) * rng.standard_normal(n)
        dL = microscopic_inventory(rho, f, dp, seed=3)
        assert np.sum(dL * dp) == pytest.approx(-rho * f * sigma**2, rel=0.03)
        assert np.sum(dL * dL) == pytest.approx(f * f * sigma**2, rel=0.03)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            microscopic_inventory(0.0, 1.0, np.zeros(3))

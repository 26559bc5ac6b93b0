from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from lobsf.errors import NumericDomainError, ShapeError, ValidationError
from lobsf.stochastic import (
    GBM,
    OU,
    Custom,
    GaussianFunctional,
    MartingaleConstVol,
    SamplePath,
    TimeGrid,
    correlated_pair,
    gaussian_expect,
    quadratic_covariation,
    simulate_path,
    simulate_paths,
)


class TestTimeGrid:
    def test_nodes(self):
        g = TimeGrid(2.0, 4)
        assert g.dt == 0.5
        np.testing.assert_array_equal(g.nodes, [0, 0.5, 1, 1.5, 2])
        assert len(g) == 5

    @pytest.mark.parametrize("h,n", [(0.0, 3), (1.0, 0), (-1.0, 2)])
    def test_invalid(self, h, n):
        with pytest.raises(ValidationError):
            TimeGrid(h, n)

    def test_subsample(self):
        g = TimeGrid(1.0, 12)
        assert g.subsample(4) == TimeGrid(1.0, 4)
        with pytest.raises(ShapeError):
            g.subsample(5)


class TestSimulatePath:
    def test_zero_vol_constant(self):
        p = simulate_path(MartingaleConstVol(5.0, 0.0), TimeGrid(1.0, 50), seed=3)
        np.testing.assert_array_equal(p.values, 5.0)

    def test_gbm_mean(self):
        T, N, M = 1.0, 252, 100_000
        x = simulate_paths(GBM(100.0, 0.05, 0.2), TimeGrid(T, N), seed=11, n_paths=M)[:, -1]
        se = x.std(ddof=1) / math.sqrt(M)
        assert abs(x.mean() - 100.0 * math.exp(0.05 * T)) < 3 * se

    def test_ou_mean(self):
        M = 20_000
        x = simulate_paths(OU(12.0, 2.0, 10.0, 0.5), TimeGrid(1.0, 100), seed=5, n_paths=M)[:, -1]
        se = x.std(ddof=1) / math.sqrt(M)
        assert abs(x.mean() - 10.2707) < 3 * se + 1e-4

    def test_euler_matches_definition(self):
        spec = Custom(1.0, lambda t, x: 0.3 * x, lambda t, x: 0.1 + 0 * x)
        grid = TimeGrid(1.0, 10)
        p = simulate_path(spec, grid, seed=2)
        from lobsf.stochastic import path_normals

        z = path_normals(2, 10, [0])[0]
        x = [1.0]
        for k in range(10):
            x.append(x[-1] + 0.3 * x[-1] * grid.dt + 0.1 * math.sqrt(grid.dt) * z[k])
        np.testing.assert_allclose(p.values, x, rtol=1e-14)

    def test_deterministic(self):
        a = simulate_path(GBM(1.0, 0.1, 0.3), TimeGrid(1.0, 100), seed=9)
        b = simulate_path(GBM(1.0, 0.1, 0.3), TimeGrid(1.0, 100), seed=9)
        assert a.values.tobytes() == b.values.tobytes()

    def test_non_finite_names_time(self):
        spec = Custom(1.0, lambda t, x: np.where(t > 0.45, np.nan, 0.0), lambda t, x: 0 * x)
        with pytest.raises(NumericDomainError, match="t_k=0.5"):
            simulate_path(spec, TimeGrid(1.0, 10), seed=0)

    def test_read_only(self):
        p = simulate_path(MartingaleConstVol(0.0, 1.0), TimeGrid(1.0, 4), seed=0)
        with pytest.raises(ValueError):
            p.values[0] = 1.0


class TestCorrelation:
    def test_plus_one(self):
        a, b = correlated_pair(MartingaleConstVol(0, 1), MartingaleConstVol(0, 1), 1.0, TimeGrid(1, 100), 4)
        np.testing.assert_array_equal(a.values, b.values)

    def test_minus_one(self):
        a, b = correlated_pair(MartingaleConstVol(0, 1), MartingaleConstVol(0, 1), -1.0, TimeGrid(1, 100), 4)
        np.testing.assert_array_equal(a.values, -b.values)

    def test_half(self):
        a, b = correlated_pair(MartingaleConstVol(0, 1), MartingaleConstVol(0, 1), -0.5, TimeGrid(1, 100_000), 8)
        cov = quadratic_covariation(a, b).values[-1]
        assert abs(cov + 0.5) / 0.5 < 0.02

    def test_out_of_range(self):
        with pytest.raises(NumericDomainError):
            correlated_pair(MartingaleConstVol(0, 1), MartingaleConstVol(0, 1), 1.5, TimeGrid(1, 10), 0)


class TestQuadraticCovariation:
    def test_constant(self):
        g = TimeGrid(1.0, 10)
        c = SamplePath(g, np.full(11, 3.0))
        np.testing.assert_array_equal(quadratic_covariation(c, c).values, 0.0)

    def test_brownian_qv(self):
        w = simulate_path(MartingaleConstVol(0, 1), TimeGrid(1.0, 100_000), seed=1)
        assert abs(quadratic_covariation(w, w).values[-1] - 1.0) < 0.02

    def test_independent(self):
        vals = []
        for s in range(100):
            a, b = correlated_pair(MartingaleConstVol(0, 1), MartingaleConstVol(0, 1), 0.0, TimeGrid(1, 1000), s)
            vals.append(quadratic_covariation(a, b).values[-1])
        vals = np.array(vals)
        assert abs(vals.mean()) < 3 * vals.std(ddof=1) / 10

    def test_mismatched(self):
        a = SamplePath(TimeGrid(1, 4), np.zeros(5))
        b = SamplePath(TimeGrid(1, 5), np.zeros(6))
        with pytest.raises(ShapeError):
            quadratic_covariation(a, b)

    def test_rate_half(self):
        # RMS error of the realized variance halves when N grows by 4
        def rms(n):
            e = [quadratic_covariation(w, w).values[-1] - 1.0
                 for w in (simulate_path(MartingaleConstVol(0, 1), TimeGrid(1, n), seed=s) for s in range(200))]
            return math.sqrt(np.mean(np.square(e)))
        ratio = rms(400) / rms(1600)
        assert 1.6 < ratio < 2.5


class TestGaussianExpect:
    def test_abs(self):
        assert gaussian_expect(lambda y: 0.5 * np.abs(y), 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)

    def test_square(self):
        assert gaussian_expect(lambda y: y**2 / 2, 1.0) == pytest.approx(0.5, abs=1e-13)

    def test_zero_a(self):
        assert gaussian_expect(lambda y: np.cos(y) + 2, 0.0) == 3.0

    def test_normalization(self):
        for q in (20, 32, 64):
            assert abs(GaussianFunctional(q).expect(lambda y: np.ones_like(y), 1.0) - 1.0) < 1e-12

    @pytest.mark.parametrize("k", [2, 4, 6, 8])
    def test_even_moments(self, k):
        assert gaussian_expect(lambda y: y**k, 1.0) == pytest.approx(math.prod(range(k - 1, 0, -2)), rel=1e-12)

    def test_against_adaptive(self):
        g = lambda y: np.log1p(y * y) + np.abs(y - 0.3)
        a = 1.7
        ref = integrate.quad(lambda z: float(g(a * z)) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi),
                             -np.inf, np.inf, points=None, limit=400, epsabs=1e-13)[0]
        got = gaussian_expect(g, a, breakpoints=(0.3,))
        assert got == pytest.approx(ref, abs=1e-9)

    def test_non_finite(self):
        with pytest.raises(NumericDomainError):
            gaussian_expect(lambda y: np.where(y > 1, np.inf, 0.0), 1.0)

    @given(st.floats(0.01, 20), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, a, alpha, beta):
        g, h = (lambda y: np.abs(y)), (lambda y: y**2)
        lhs = gaussian_expect(lambda y: alpha * g(y) + beta * h(y), a)
        rhs = alpha * gaussian_expect(g, a) + beta * gaussian_expect(h, a)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)

    @given(st.floats(0.01, 50), st.floats(-5, 5))
    def test_odd_vanishes(self, a, shift):
        assert abs(gaussian_expect(lambda y: y**3 + np.sin(y) * shift, a)) < 1e-8 * (1 + a**3)

    @given(st.floats(0.0, 30))
    def test_positivity(self, a):
        assert gaussian_expect(lambda y: np.abs(np.sin(y)), a) >= 0

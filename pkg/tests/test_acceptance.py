"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

Every test prints a ``PASS``/``FAIL`` line; run with ``pytest -v -s`` or read
the captured output in the report.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from lobsf.cli.main import main as cli_main
from lobsf.hedging import (
    OrderClass,
    PdeProblem,
    black_scholes_call,
    call_payoff,
    call_spread_payoff,
    classify_order_type,
    default_domain,
    frictionless_spread,
    heat_kernel_call,
    linear_effective_diffusion,
    linear_payoff,
    replication_error,
    solve_pde,
)
from lobsf.impact import (
    ImpactBookModel,
    LimitLawSpec,
    RecoveryWarning,
    impact_limit_experiment,
    manipulation_profit,
    verify_limit_law,
)
from lobsf.ledger import convergence_experiment
from lobsf.mm import AlphaModel, F_a, M_and_m, MMModel, simulate_mm
from lobsf.orderbook import Flat, HalfSpreadWall, Tabulated, biconjugate_check, conjugate_numeric
from lobsf.stochastic import MartingaleConstVol, TimeGrid, gaussian_expect

pytestmark = pytest.mark.acceptance

SQ2PI = math.sqrt(2 * math.pi)
SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, outside pytest's capture, then assert."""

    def report(n, label, checks: dict, elapsed: float, budget: float | None):
        checks = dict(checks)
        if budget is not None:
            checks[f"runtime {elapsed:.1f}s < {budget:g}s"] = elapsed < budget
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {label}" + (f" (failed: {failed})" if failed else ""))
        assert ok, failed

    return report


def test_criterion_01_legendre(verdict):
    t0 = time.perf_counter()
    l = np.linspace(-10, 10, 2001)
    coarse = l[::10]
    closed, numeric = 0.0, 0.0
    for m in (0.5, 1.0, 2.0, 8.0):
        shape = Flat(m)
        closed = max(closed, float(np.max(np.abs(shape.conjugate()(l) - l * l / (2 * m)))))
        # independent brute-force conjugate on a coarser grid
        num = conjugate_numeric(shape.gamma, coarse)
        numeric = max(numeric, float(np.max(np.abs(num - coarse * coarse / (2 * m)))))
    shapes = [Flat(0.5), Flat(1.0), Flat(2.0), Flat(8.0), HalfSpreadWall(0.5), HalfSpreadWall(2.0),
              Tabulated([-2.0, -1.0, 0.0, 0.5, 2.0], [3.0, 1.0, 0.0, 0.25, 2.5])]
    bic = max(biconjugate_check(s) for s in shapes)
    verdict(1, f"flat cost err {closed:.2e}, numeric conjugate err {numeric:.2e}, biconjugate {bic:.2e}",
            {"closed <= 1e-9": closed <= 1e-9, "numeric <= 1e-9": numeric <= 1e-9, "biconjugate <= 1e-9": bic <= 1e-9},
            time.perf_counter() - t0, 1.0)


def test_criterion_02_gaussian_functional(verdict):
    t0 = time.perf_counter()
    err = 0.0
    for s in np.linspace(0.1, 5.0, 5):
        for l in np.linspace(0.1, 4.0, 5):
            val = float(gaussian_expect(lambda y: s * np.abs(y) / 2, l, breakpoints=(0.0,)))
            err = max(err, abs(val - s * l / SQ2PI))
    verdict(2, f"max |Phi_l(s|.|/2) - s l/sqrt(2 pi)| = {err:.2e}", {"err <= 1e-8": err <= 1e-8},
            time.perf_counter() - t0, 1.0)


def test_criterion_03_wealth_convergence(verdict):
    t0 = time.perf_counter()
    table = convergence_experiment(MartingaleConstVol(0.0, 1.0), MartingaleConstVol(0.0, 1.0), -1.0,
                                   Flat(1.0).conjugate(), "limit", [2500, 10000, 40000], 200, seed=1)
    rms = list(table.rms_sup)
    rate = table.rate()
    verdict(3, f"rms sup-deviation {['%.3e' % r for r in rms]}, rate {rate:.3f}",
            {"decreasing": all(b < a for a, b in zip(rms, rms[1:])), "rate in [0.35, 0.65]": 0.35 <= rate <= 0.65},
            time.perf_counter() - t0, 120.0)


def test_criterion_04_impact_limit(verdict):
    t0 = time.perf_counter()
    r = impact_limit_experiment(ImpactBookModel(Flat(1.0), 0.5), 0.0, 1.0, 100_000, 500, seed=2)
    vol_err = abs(r.vol - 0.5) / 0.5
    cov_err = abs(r.covariation + 0.5) / 0.5
    verdict(4, f"vol {r.vol:.5f}, covariation {r.covariation:.5f}, drift {r.drift:.4f} +- {r.drift_se:.4f}",
            {"vol within 5%": vol_err <= 0.05, "covariation within 5%": cov_err <= 0.05,
             "drift within 3 SE": abs(r.drift) <= 3 * r.drift_se},
            time.perf_counter() - t0, 120.0)


def test_criterion_05_jacod(verdict):
    t0 = time.perf_counter()
    spec = LimitLawSpec(lambda y: y**3, lambda y: 3 * y**2, 1.0, 1.0, 10_000, 10_000, seed=7, name="y^3")
    rep = verify_limit_law(spec)
    mean, se, var = rep.sample["mean"], rep.stderr["mean"], rep.sample["variance"]
    verdict(5, f"mean {mean:.4f} +- {se:.4f} (target 3), variance {var:.3f} (target 15)",
            {"mean within 3 SE of 3": abs(mean - 3.0) <= 3 * se, "variance within 5%": abs(var - 15.0) <= 0.75},
            time.perf_counter() - t0, 120.0)


def test_criterion_06_manipulation(verdict):
    t0 = time.perf_counter()
    res = {lam: manipulation_profit(ImpactBookModel(Flat(1.0), lam), 1.0, 1.0, 1000, 1000, seed=3)
           for lam in (0.5, 1.0)}
    with pytest.warns(RecoveryWarning):
        res[2.0] = manipulation_profit(ImpactBookModel(Flat(1.0), 2.0), 1.0, 1.0, 1000, 1000, seed=3)
    agree = {f"lam={lam} within 3 SE": abs(r.mc_mean - r.closed_form) <= 3 * r.mc_stderr for lam, r in res.items()}
    desc = ", ".join(f"lam={lam}: {r.closed_form:+.4f} vs {r.mc_mean:+.4f}" for lam, r in res.items())
    verdict(6, desc, {**agree, "exact zero at lam=1": res[1.0].closed_form == 0.0,
                      "sign flip": res[0.5].closed_form > 0 > res[2.0].closed_form},
            time.perf_counter() - t0, 60.0)


def _gbm_vol(p):
    return 0.2 * np.asarray(p, dtype=float)


def _const(v):
    return lambda p: np.full(np.shape(p), v, dtype=float)


def test_criterion_07a_black_scholes(verdict):
    t0 = time.perf_counter()
    prob = PdeProblem(call_payoff(100.0), 1.0, _gbm_vol, *default_domain(100.0, 0.2, 1.0), n_p=400, n_t=400,
                      spread=frictionless_spread(_gbm_vol), p0=100.0)
    sol = solve_pde(prob)
    p = sol.p[1:-1]
    err = float(np.max(np.abs(sol.v[0, 1:-1] - black_scholes_call(p, 100.0, 0.2, 1.0))))
    verdict("7a", f"max |v - BS| = {err:.2e}, price {sol.price:.5f}", {"err <= 1e-3": err <= 1e-3},
            time.perf_counter() - t0, 60.0)


def test_criterion_07b_heat_kernel(verdict):
    t0 = time.perf_counter()
    sigma, s = 20.0, 40.0
    prob = PdeProblem(call_payoff(100.0), 1.0, _const(sigma), *default_domain(100.0, sigma, 1.0, False),
                      n_p=400, n_t=400, spread=_const(s), p0=100.0)
    sol = solve_pde(prob)
    var = 2 * linear_effective_diffusion(sigma, s).value
    err = float(np.max(np.abs(sol.v[0] - heat_kernel_call(sol.p, 100.0, var))))
    verdict("7b", f"max |v - heat kernel| = {err:.2e}", {"err <= 1e-3": err <= 1e-3},
            time.perf_counter() - t0, 60.0)


def test_criterion_07c_linear_payoff(verdict):
    t0 = time.perf_counter()
    prob = PdeProblem(linear_payoff(2.0, 1.0), 1.0, _const(20.0), *default_domain(100.0, 20.0, 1.0, False),
                      n_p=400, n_t=400, spread=_const(40.0), p0=100.0)
    sol = solve_pde(prob)
    err = float(np.max(np.abs(sol.v - (2.0 * sol.p + 1.0)[None, :])))
    verdict("7c", f"max |v - payoff| = {err:.2e}", {"err <= 1e-10": err <= 1e-10}, time.perf_counter() - t0, 60.0)


def test_criterion_08_replication(verdict):
    t0 = time.perf_counter()
    prob = PdeProblem(call_payoff(100.0), 1.0, _gbm_vol, *default_domain(100.0, 0.2, 1.0), n_p=400, n_t=400,
                      mu=lambda p: 0.05 * np.asarray(p, dtype=float), spread=frictionless_spread(_gbm_vol),
                      p0=100.0)
    sol = solve_pde(prob)
    reps = [replication_error(sol, prob, 10_000, n, seed=4) for n in (2500, 10_000)]
    rate = math.log(reps[0].rms / reps[1].rms) / math.log(4.0)
    unbiased = {f"N={r.steps} mean within 3 SE": abs(r.mean) <= 3 * r.stderr for r in reps}
    desc = ", ".join(f"N={r.steps}: mean {r.mean:+.2e} +- {r.stderr:.2e}, rms {r.rms:.3e}" for r in reps)
    verdict(8, f"{desc}, rate {rate:.3f}", {**unbiased, "rate in [0.35, 0.65]": 0.35 <= rate <= 0.65},
            time.perf_counter() - t0, 180.0)


@pytest.mark.parametrize("label,payoff,expected", [
    ("long call", call_payoff(100.0), OrderClass.MARKET),
    ("short call", lambda p: -call_payoff(100.0)(p), OrderClass.LIMIT),
    ("call spread", call_spread_payoff(90.0, 110.0), OrderClass.MIXED),
])
def test_criterion_09_classifier(verdict, label, payoff, expected):
    t0 = time.perf_counter()
    prob = PdeProblem(payoff, 1.0, _gbm_vol, 20.0, 300.0, n_p=200, n_t=100,
                      spread=frictionless_spread(_gbm_vol), p0=100.0)
    got = classify_order_type(solve_pde(prob))
    verdict(9, f"{label} -> {got.value}", {f"expected {expected.value}": got is expected},
            time.perf_counter() - t0, 1.0)


def _scan(model, a, n=1_000_001, hi=60.0):
    x = np.linspace(0.0, hi, n)
    F = F_a(model, a, x)
    i = int(np.argmax(F))
    f0, f1, f2 = F[i - 1], F[i], F[i + 1]
    return x[i] + 0.5 * (x[1] - x[0]) * (f0 - f2) / (f0 - 2 * f1 + f2)


def test_criterion_10_market_making(verdict):
    t0 = time.perf_counter()
    model = MMModel.explicit()
    a_grid = (0.25, 0.5, 1.0, 2.0, 4.0)
    res = [M_and_m(model, a) for a in a_grid]
    M = [r.M for r in res]
    scan_err = max(abs(r.m - _scan(model, a)) for a, r in zip(a_grid, res))
    sigma, T = 0.3, 1.0
    rep = simulate_mm(model, AlphaModel("martingale", T, sigma), TimeGrid(T, 500), 10_000, seed=5)
    theory = M_and_m(model, 1.0).M * sigma**2 * T
    dropped = MMModel.explicit(drop_sqrt_2pi=True)
    drop_err = max(abs(M_and_m(dropped, a).m - math.sqrt(1 + 3 * a)) for a in (0.5, 1.0, 2.0))
    verdict(10, f"scan err {scan_err:.1e}, pnl {rep.mean_pnl:.5f} +- {rep.pnl_se:.5f} vs {theory:.5f}, "
                f"dL {rep.mean_dL:+.4f} +- {rep.dL_se:.4f}, sqrt(1+3a) err {drop_err:.1e}",
            {"(a) M strictly decreasing": all(b < a for a, b in zip(M, M[1:])),
             "(a) m matches scan to 1e-6": scan_err <= 1e-6,
             "(b) pnl within 3 SE": abs(rep.mean_pnl - theory) <= 3 * rep.pnl_se,
             "(b) dL within 3 SE": abs(rep.mean_dL) <= 3 * rep.dL_se,
             "(c) dropped-convention m to 1e-6": drop_err <= 1e-6},
            time.perf_counter() - t0, 180.0)


def test_criterion_11_determinism(verdict, tmp_path, capsys):
    t0 = time.perf_counter()
    mismatched = []
    paths = sorted(SCENARIOS.glob("*.toml"))
    for sc in paths:
        outs = []
        for k in ("a", "b"):
            out = tmp_path / sc.stem / k
            assert cli_main(["run", str(sc), "--out", str(out), "--quiet"]) == 0, sc.name
            outs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            mismatched.append(sc.stem)
    capsys.readouterr()
    verdict(11, f"{len(paths)} scenarios rerun, mismatched: {mismatched or 'none'}",
            {"byte-identical": not mismatched}, time.perf_counter() - t0, None)

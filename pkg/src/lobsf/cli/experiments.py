"""Experiment runners: each takes a validated scenario and an output directory
and returns a summary dict plus the names of the CSV files written."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..hedging import (
    black_scholes_call,
    classify_order_type,
    heat_kernel_call,
    linear_effective_diffusion,
    replication_error,
    solve_pde,
)
from ..impact import (
    ImpactBookModel,
    LimitLawSpec,
    impact_limit_experiment,
    manipulation_profit,
    verify_limit_law,
)
from ..ledger import convergence_experiment
from ..mm import M_and_m, hamiltonian_check, simulate_mm
from ..stochastic import TimeGrid
from .config import ProcessPair, Scenario, expression
from .output import write_rows


def convergence(sc: Scenario, out: Path):
    c = sc.convergence
    procs = sc.process or ProcessPair()
    table = convergence_experiment(
        procs.p.spec(), procs.L.spec(), c.corr, sc.book.cost(), c.order, c.scales,
        sc.mc.paths, sc.seed, horizon=c.horizon, ref_factor=c.ref_factor,
        chunk=sc.mc.chunk or 16, threads=sc.threads,
    )
    rows = table.rows()
    write_rows(out / "convergence.csv", rows)
    rms = list(table.rms_sup)
    summary = {
        "rate": table.rate() if len(rms) > 1 else None,
        "rms_sup": rms,
        "monotone_decreasing": all(b < a for a, b in zip(rms, rms[1:])),
        "reference_steps": table.reference_steps,
        "rows": rows,
    }
    return summary, ["convergence.csv"]


def impact_limit(sc: Scenario, out: Path):
    i = sc.impact
    book = ImpactBookModel(sc.book.shape(), i.recovery)
    r = impact_limit_experiment(book, i.b, i.l, i.steps, sc.mc.paths, sc.seed, i.horizon,
                                chunk=sc.mc.chunk or 20, threads=sc.threads)
    th = r.theory
    rows = [
        {"quantity": "drift", "theory": th.drift, "estimate": r.drift, "stderr": r.drift_se},
        {"quantity": "vol", "theory": th.vol, "estimate": r.vol, "stderr": r.vol_se},
        {"quantity": "covariation", "theory": th.covariation, "estimate": r.covariation,
         "stderr": r.covariation_se},
    ]
    write_rows(out / "impact_limit.csv", rows)
    summary = {
        "theory": {"drift": th.drift, "vol": th.vol, "covariation": th.covariation},
        "estimate": {"drift": r.drift, "vol": r.vol, "covariation": r.covariation},
        "stderr": {"drift": r.drift_se, "vol": r.vol_se, "covariation": r.covariation_se},
        "vol_rel_error": abs(r.vol - th.vol) / th.vol if th.vol else None,
        "covariation_rel_error": abs(r.covariation - th.covariation) / abs(th.covariation)
        if th.covariation else None,
        "warnings": list(book.warnings),
    }
    return summary, ["impact_limit.csv"]


def manipulation(sc: Scenario, out: Path):
    m = sc.manipulation
    lams = m.recovery if isinstance(m.recovery, list) else [m.recovery]
    rows, warnings = [], []
    for lam in lams:
        res = manipulation_profit(ImpactBookModel(sc.book.shape(), lam), m.l, m.horizon,
                                  m.paths, m.steps, sc.seed, m.p0)
        warnings.extend(res.warnings)
        rows.append({"recovery": float(lam), "closed_form": res.closed_form,
                     "mc_mean": res.mc_mean if res.mc_mean is not None else math.nan,
                     "mc_stderr": res.mc_stderr if res.mc_stderr is not None else math.nan,
                     "admits_manipulation": res.admits_manipulation})
    write_rows(out / "manipulation.csv", rows)
    summary = {"rows": rows, "warnings": warnings}
    if len(rows) == 1:
        summary["expected_profit"] = rows[0]["closed_form"]
    return summary, ["manipulation.csv"]


def _reference(sc: Scenario, sol):
    """Closed-form comparison where one exists."""
    h = sc.hedge
    if h.payoff.kind != "call" or h.payoff.sign != 1:
        return None
    p = sol.p[1:-1]
    if h.spread == "frictionless" and h.vol_model == "multiplicative":
        ref = black_scholes_call(p, h.payoff.strike, h.sigma, h.maturity)
        label = "black_scholes"
    elif h.vol_model == "additive" and isinstance(h.spread, float):
        d = linear_effective_diffusion(h.sigma, h.spread).value
        ref = heat_kernel_call(p, h.payoff.strike, 2.0 * d * h.maturity)
        label = "heat_kernel"
    else:
        return None
    return {"kind": label, "price": float(np.interp(h.p0, p, ref)),
            "max_abs_error": float(np.max(np.abs(sol.v[0, 1:-1] - ref)))}


def _solve(sc: Scenario):
    prob = sc.hedge.problem(sc.book)
    return prob, solve_pde(prob)


def hedge(sc: Scenario, out: Path):
    prob, sol = _solve(sc)
    pay = np.asarray(prob.payoff(sol.p), dtype=float)
    sol.to_csv(out / "surfaces.csv")
    summary = {
        "price": sol.price,
        "order_type": classify_order_type(sol).value,
        "min_margin": float(np.min(sol.margins)),
        "explicit_steps": int(np.sum(sol.steps)),
        "max_abs_v_minus_payoff": float(np.max(np.abs(sol.v - pay[None, :]))),
        "terminal_deviation": float(np.max(np.abs(sol.v[-1] - pay))),
        "grid": {"n_p": prob.n_p, "n_t": prob.n_t, "p_min": prob.p_min, "p_max": prob.p_max},
        "reference": _reference(sc, sol),
    }
    return summary, ["surfaces.csv"]


def replicate(sc: Scenario, out: Path):
    prob, sol = _solve(sc)
    rows = []
    for n in sc.replicate.steps:
        r = replication_error(sol, prob, sc.mc.paths, n, sc.seed, censor=sc.replicate.censor,
                              chunk=sc.mc.chunk or 1000, threads=sc.threads)
        rows.append({"steps": n, "paths": r.paths, "mean": r.mean, "rms": r.rms, "stderr": r.stderr,
                     "exited": r.exited, **r.quantiles})
    write_rows(out / "replication.csv", rows)
    rate = None
    if len(rows) > 1:
        rate = float(-np.polyfit(np.log([r["steps"] for r in rows]), np.log([r["rms"] for r in rows]), 1)[0])
    summary = {"price": sol.price, "rate": rate, "rows": rows}
    return summary, ["replication.csv"]


def market_make(sc: Scenario, out: Path):
    model = sc.mm.build()
    am = sc.alpha.build()
    grid = TimeGrid(am.maturity, sc.alpha.steps)
    rep = simulate_mm(model, am, grid, sc.mc.paths, sc.seed, chunk=sc.mc.chunk or 1000, threads=sc.threads)
    rep.policy.to_csv(out / "spreads.csv")
    table = []
    for a in sc.mm.a_grid:
        r = M_and_m(model, a)
        table.append({"a": float(a), "M": r.M, "m": r.m})
    write_rows(out / "m_table.csv", table)
    one = M_and_m(model, 1.0)
    summary = {
        **rep.to_dict(),
        "pnl_z": (rep.mean_pnl - rep.theory) / rep.pnl_se if rep.pnl_se > 0 else None,
        "M1": one.M,
        "m1": one.m,
        "hamiltonian_shortfall": hamiltonian_check(model, rep.policy),
        "m_table": table,
    }
    return summary, ["spreads.csv", "m_table.csv"]


def verify_jacod(sc: Scenario, out: Path):
    j = sc.jacod
    spec = LimitLawSpec(expression(j.F, "y"), expression(j.dF, "y"), j.b, j.sigma, j.steps,
                        sc.mc.paths, sc.seed, j.horizon, tuple(j.growth), j.F)
    rep = verify_limit_law(spec, chunk=sc.mc.chunk or 200, threads=sc.threads)
    rows = [{"quantity": k, "theory": rep.theory[k], "sample": rep.sample[k], "stderr": rep.stderr[k]}
            for k in ("mean", "variance", "covariation")]
    write_rows(out / "jacod.csv", rows)
    summary = {
        "theory": rep.theory, "sample": rep.sample, "stderr": rep.stderr,
        "mean_z": rep.errors["mean"] / rep.stderr["mean"],
        "variance_rel_error": abs(rep.errors["variance"]) / rep.theory["variance"],
    }
    return summary, ["jacod.csv"]


RUNNERS = {
    "convergence": convergence,
    "impact-limit": impact_limit,
    "manipulation": manipulation,
    "hedge": hedge,
    "replicate": replicate,
    "market-make": market_make,
    "verify-jacod": verify_jacod,
}

DESCRIPTIONS = {
    "convergence": "trade-clock wealth vs its continuous limit across scales",
    "impact-limit": "price vol, drift and covariation generated by a Brownian inventory",
    "manipulation": "expected round-trip gain on a flat book with price recovery",
    "hedge": "solve the replication PDE and classify the order type",
    "replicate": "Monte Carlo replication error of the PDE hedge",
    "market-make": "optimal spreads, simulated P&L and expected profit",
    "verify-jacod": "moments of normalized sums F(sqrt(N) dY) vs the limit law",
}

"""Optimal spreads for a risk-neutral market maker.

Quoting a spread ``s = sigma x`` yields inventory vol ``sigma f(x)`` and
price-inventory correlation ``-rho(x)``. The Hamiltonian per unit variance
is ``F_a(x) = x f(x) / sqrt(2 pi) - a rho(x) f(x)``, maximized at
``m(a)`` with value ``M(a)``; the optimal spread is ``s_t = sigma_t m(alpha_t)``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .errors import BracketError, UnsupportedModelError, ValidationError
from .ledger import write_csv
from .stochastic import (
    GBM,
    OU,
    ItoProcessSpec,
    MartingaleConstVol,
    SamplePath,
    TimeGrid,
    _integrate,
    chunk_ranges,
    map_chunks,
    path_normals,
)

__all__ = [
    "MMModel",
    "F_a",
    "MResult",
    "M_and_m",
    "MCache",
    "AlphaModel",
    "alpha_path",
    "SpreadPolicy",
    "optimal_spread",
    "hamiltonian_check",
    "MMReport",
    "simulate_mm",
    "expected_profit",
    "microscopic_inventory",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class MMModel:
    """Fill intensity ``f`` and correlation ``rho`` as functions of spread over vol.

    ``drop_sqrt_2pi`` replaces the ``1/sqrt(2 pi)`` gain factor by 1, in
    both ``F_a`` and the simulated spread income.
    """

    f: Callable
    rho: Callable
    name: str = "custom"
    drop_sqrt_2pi: bool = False

    @classmethod
    def explicit(cls, drop_sqrt_2pi: bool = False) -> "MMModel":
        return cls(
            f=lambda x: 1.0 / (1.0 + np.asarray(x, dtype=float)) ** 2,
            rho=lambda x: 1.0 / (1.0 + np.asarray(x, dtype=float)),
            name="explicit",
            drop_sqrt_2pi=drop_sqrt_2pi,
        )

    @property
    def gain(self) -> float:
        return 1.0 if self.drop_sqrt_2pi else _INV_SQRT_2PI

    def violations(self, x_max: float = 100.0, n: int = 2001) -> list[str]:
        """Invariant violations of ``f`` and ``rho`` on a log-spaced test grid."""
        x = np.concatenate([[0.0], np.logspace(-4, math.log10(x_max), n)])
        out = []
        with np.errstate(all="ignore"):
            f = np.asarray(self.f(x), dtype=float) * np.ones_like(x)
            r = np.asarray(self.rho(x), dtype=float) * np.ones_like(x)
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            out.append("f must be finite and > 0")
        elif np.any(np.diff(f) > 1e-12 * np.abs(f[:-1])):
            k = int(np.argmax(np.diff(f) > 1e-12 * np.abs(f[:-1])))
            out.append(f"f must be nonincreasing (rises after x={x[k]:.6g})")
        if not np.all(np.isfinite(r)) or np.any(r < 0) or np.any(r > 1):
            k = int(np.argmax(~np.isfinite(r) | (r < 0) | (r > 1)))
            out.append(f"rho ∉ [0,1] (rho({x[k]:.6g}) = {r[k]:.6g})")
        if not out:
            xf = x * f
            tail = xf[x >= x_max / 10]
            if np.any(np.diff(tail) > 0) or xf[-1] > 0.5 * np.max(xf):
                out.append(f"x f(x) must decrease to 0 for large x (checked up to x={x_max:g})")
        return out

    def validate(self) -> "MMModel":
        v = self.violations()
        if v:
            raise ValidationError("; ".join(v))
        return self


def F_a(model: MMModel, a, x):
    """``x f(x) / sqrt(2 pi) - a rho(x) f(x)``."""
    x = np.asarray(x, dtype=float)
    f = model.f(x)
    return model.gain * x * f - a * model.rho(x) * f


@dataclass(frozen=True)
class MResult:
    M: float
    m: float
    x_max: float
    nonpositive_a: bool


def M_and_m(model: MMModel, a: float, n_grid: int = 4001, max_doublings: int = 60) -> MResult:
    """Maximum ``M(a)`` and smallest maximizer ``m(a)`` of ``F_a`` over ``x >= 0``.

    The search interval grows from ``max(a + 1, 10)`` by doubling until the
    tail bound ``gain x f(x) + max(-a, 0) f(x)`` drops below the best value
    found; a coarse log grid then localizes the maximum and a bounded
    Brent search refines it.
    """
    a = float(a)
    g = model.gain
    x_max = max(a + 1.0, 10.0)

    def grid(hi):
        return np.concatenate([[0.0], np.logspace(-6, math.log10(hi), n_grid)])

    for _ in range(max_doublings):
        x = grid(x_max)
        F = F_a(model, a, x)
        best = float(np.max(F))
        fx = float(model.f(x_max))
        bound = g * x_max * fx + max(-a, 0.0) * fx
        # a maximum on the right edge means the supremum may lie further out
        if bound < best and int(np.argmax(F)) < len(x) - 1:
            break
        x_max *= 2.0
    else:
        raise BracketError(
            f"F_a still admissible at x={x_max:.6g} for a={a}: tail bound {bound:.6g} >= best {best:.6g}"
        )
    i = int(np.argmax(F))
    lo, hi = x[max(i - 1, 0)], x[min(i + 1, len(x) - 1)]
    m, M = float(x[i]), float(F[i])
    if hi > lo:
        res = minimize_scalar(lambda t: -float(F_a(model, a, t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13 * max(1.0, hi)})
        if -res.fun >= M:
            m, M = float(res.x), float(-res.fun)
    # ties: report the smallest maximizer
    tol = 1e-12 * max(1.0, abs(M))
    near = F >= M - tol
    j = int(np.argmax(near)) if near.any() else len(x)
    if j < len(x) and x[j] < m and j > 0:
        lo, hi = float(x[j - 1]), float(x[j])
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if float(F_a(model, a, mid)) >= M - tol:
                hi = mid
            else:
                lo = mid
        m = hi
    elif j == 0 and m > 0:  # maximum at the origin
        m = 0.0
    return MResult(M=M, m=m, x_max=x_max, nonpositive_a=a <= 0)


class MCache:
    """``m`` and ``M`` on an ``a``-grid with monotone (PCHIP) interpolation.

    Queries outside the current range extend the grid and rebuild.
    """

    def __init__(self, model: MMModel, lo: float = 0.1, hi: float = 10.0, n: int = 129):
        self.model = model
        self.n = n
        self._build(lo, hi)

    def _build(self, lo, hi):
        if not lo < hi:
            lo, hi = lo - 0.5 * max(abs(lo), 1.0), hi + 0.5 * max(abs(hi), 1.0)
        self.lo, self.hi = float(lo), float(hi)
        self.a = np.linspace(self.lo, self.hi, self.n)
        res = [M_and_m(self.model, a) for a in self.a]
        self._m = PchipInterpolator(self.a, [r.m for r in res])
        self._M = PchipInterpolator(self.a, [r.M for r in res])

    def ensure(self, a) -> None:
        a = np.asarray(a, dtype=float)
        lo, hi = float(np.min(a)), float(np.max(a))
        if lo < self.lo or hi > self.hi:
            width = max(hi, self.hi) - min(lo, self.lo)
            self._build(min(lo, self.lo) - 0.05 * width, max(hi, self.hi) + 0.05 * width)

    def m(self, a):
        self.ensure(a)
        return self._m(a)

    def M(self, a):
        self.ensure(a)
        return self._M(a)


# ---------------------------------------------------------------------------
# alpha
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaModel:
    """Price model for which the adjoint ``alpha_t`` has a closed form.

    ``kind`` is ``"martingale"`` (``dp = sigma dW``), ``"black_scholes"``
    (``dp = mu p dt + sigma p dW``) or ``"ou"``
    (``dp = -kappa (p - p0) dt + sigma dW``).
    """

    kind: str
    maturity: float
    sigma: float
    p0: float = 100.0
    mu: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("martingale", "black_scholes", "ou"):
            raise UnsupportedModelError(f"no closed-form alpha for price model {self.kind!r}")
        if not self.sigma > 0:
            raise ValidationError("sigma must be > 0")
        if not self.maturity > 0:
            raise ValidationError("maturity must be > 0")
        if self.kind == "ou" and not self.kappa > 0:
            raise ValidationError("mean reversion kappa must be > 0")

    def price_spec(self) -> ItoProcessSpec:
        if self.kind == "martingale":
            return MartingaleConstVol(self.p0, self.sigma)
        if self.kind == "black_scholes":
            return GBM(self.p0, self.mu, self.sigma)
        return OU(self.p0, self.kappa, self.p0, self.sigma)

    def vol(self, p):
        """Absolute price vol ``sigma_t``."""
        p = np.asarray(p, dtype=float)
        if self.kind == "black_scholes":
            return self.sigma * p
        return np.full_like(p, self.sigma)

    def alpha(self, t, p):
        t = np.asarray(t, dtype=float)
        p = np.asarray(p, dtype=float)
        tau = self.maturity - t
        if self.kind == "martingale":
            return np.ones(np.broadcast(t, p).shape)
        if self.kind == "black_scholes":
            e = np.exp(self.mu * tau)
            return np.broadcast_to(self.mu / self.sigma**2 * (e - 1.0) + e, np.broadcast(t, p).shape).copy()
        e = np.exp(-self.kappa * tau)
        return -self.kappa / self.sigma**2 * (p - self.p0) ** 2 * (e - 1.0) + e


def alpha_path(model: AlphaModel, p: SamplePath | np.ndarray, grid: TimeGrid | None = None) -> np.ndarray:
    """``alpha_t`` at every node of a price path (or a batch of rows)."""
    if isinstance(p, SamplePath):
        return model.alpha(p.t, p.values)
    if grid is None:
        raise ValidationError("a time grid is needed for raw price arrays")
    return model.alpha(grid.nodes, p)


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpreadPolicy:
    t: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    spread: np.ndarray
    inv_vol: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.spread / self.sigma

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, {"t": self.t, "alpha": self.alpha, "s": self.spread,
                         "sigma": self.sigma, "inv_vol": self.inv_vol})


def _m_of(model: MMModel, alphas: np.ndarray, cache: MCache | None) -> np.ndarray:
    u = np.unique(alphas)
    if len(u) <= 8:
        vals = {a: M_and_m(model, a).m for a in u}
        return np.vectorize(vals.__getitem__, otypes=[float])(alphas)
    cache = MCache(model, float(u[0]), float(u[-1])) if cache is None else cache
    return cache.m(alphas)


def optimal_spread(model: MMModel, alphas, sigmas, t=None, cache: MCache | None = None) -> SpreadPolicy:
    """``s_t = sigma_t m(alpha_t)`` with inventory vol ``sigma_t f(m(alpha_t))``."""
    alphas = np.asarray(alphas, dtype=float)
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), alphas.shape)
    if not np.all(np.isfinite(alphas)):
        raise ValidationError("alpha must be finite")
    if np.any(sigmas <= 0):
        raise ValidationError("sigma must be > 0")
    x = _m_of(model, alphas, cache)
    t = np.arange(alphas.shape[-1], dtype=float) if t is None else np.asarray(t, dtype=float)
    return SpreadPolicy(t, alphas, sigmas, sigmas * x, sigmas * np.asarray(model.f(x), dtype=float))


def hamiltonian_check(model: MMModel, policy: SpreadPolicy, samples: int = 16, n_grid: int = 20001) -> float:
    """Largest shortfall of ``F_alpha(s/sigma)`` below the grid maximum on sampled nodes."""
    a = np.ravel(policy.alpha)
    x = np.ravel(policy.ratio)
    idx = np.unique(np.linspace(0, len(a) - 1, min(samples, len(a))).astype(int))
    worst = 0.0
    for k in idx:
        hi = max(4.0 * x[k], 10.0)
        grid = np.linspace(0.0, hi, n_grid)
        worst = max(worst, float(np.max(F_a(model, a[k], grid)) - F_a(model, a[k], x[k])))
    return worst


# ---------------------------------------------------------------------------
# simulation and profit
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MMReport:
    mean_pnl: float
    pnl_se: float
    theory: float
    mean_dL: float
    dL_se: float
    mean_covariation: float
    spread_mean: float
    spread_min: float
    spread_max: float
    inv_vol_path: np.ndarray = field(repr=False)
    policy: SpreadPolicy = field(repr=False)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_pnl": self.mean_pnl,
            "pnl_se": self.pnl_se,
            "theory": self.theory,
            "mean_dL": self.mean_dL,
            "dL_se": self.dL_se,
            "mean_covariation": self.mean_covariation,
            "spread_mean": self.spread_mean,
            "spread_min": self.spread_min,
            "spread_max": self.spread_max,
            "config": self.config,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def simulate_mm(
    model: MMModel,
    alpha_model: AlphaModel,
    grid: TimeGrid,
    paths: int,
    seed: int,
    L0: float = 0.0,
    chunk: int = 1000,
    threads: int = 1,
    cache: MCache | None = None,
) -> MMReport:
    """Simulate price, inventory and wealth under the optimal spread policy.

    ``dL = -rho f dp + f sqrt(1 - rho^2) sigma dW_perp`` with ``f, rho``
    at ``x = m(alpha_t)``. The reported P&L is
    ``L_T p_T - L_0 p_0 - sum p dL + gain * sum sigma s f dt``.
    """
    spec = alpha_model.price_spec()
    dt = grid.dt
    sq = math.sqrt(dt)
    t = grid.nodes
    if cache is None and alpha_model.kind != "martingale":
        cache = MCache(model, 0.1, 2.0)

    ranges = chunk_ranges(paths, chunk)
    if cache is not None:
        # fix the interpolation range up front so results do not depend on chunking
        def span(rows):
            p = _integrate(spec, grid, path_normals(seed, grid.steps, rows, stream=0), "auto")
            a = alpha_model.alpha(t[None, :-1], p[:, :-1])
            return float(np.min(a)), float(np.max(a))

        spans = map_chunks(span, ranges, threads)
        cache.ensure([min(q[0] for q in spans), max(q[1] for q in spans)])

    def work(rows):
        p = _integrate(spec, grid, path_normals(seed, grid.steps, rows, stream=0), "auto")
        zp = path_normals(seed, grid.steps, rows, stream=1)
        alpha = alpha_model.alpha(t[None, :-1], p[:, :-1])
        sig = alpha_model.vol(p[:, :-1])
        pol = optimal_spread(model, alpha, sig, cache=cache)
        x = pol.ratio
        f = np.asarray(model.f(x), dtype=float)
        r = np.asarray(model.rho(x), dtype=float)
        dp = np.diff(p, axis=1)
        dL = -r * f * dp + f * np.sqrt(1.0 - r * r) * sig * sq * zp
        L = L0 + np.concatenate([np.zeros((len(rows), 1)), np.cumsum(dL, axis=1)], axis=1)
        pnl = L[:, -1] * p[:, -1] - L0 * p[:, 0] - np.sum(p[:, :-1] * dL, axis=1)
        pnl += model.gain * np.sum(sig * pol.spread * f, axis=1) * dt
        return pnl, L[:, -1] - L0, np.sum(dp * dL, axis=1), pol

    parts = map_chunks(work, ranges, threads)
    pnl = np.concatenate([q[0] for q in parts])
    dL = np.concatenate([q[1] for q in parts])
    cov = np.concatenate([q[2] for q in parts])
    spreads = np.concatenate([q[3].spread for q in parts])
    inv = np.concatenate([q[3].inv_vol for q in parts])
    first = parts[0][3]
    policy = SpreadPolicy(t[:-1], first.alpha[0], first.sigma[0], first.spread[0], first.inv_vol[0])
    n = len(pnl)
    return MMReport(
        mean_pnl=float(pnl.mean()),
        pnl_se=float(pnl.std(ddof=1) / math.sqrt(n)),
        theory=expected_profit(model, alpha_model, cache=cache),
        mean_dL=float(dL.mean()),
        dL_se=float(dL.std(ddof=1) / math.sqrt(n)),
        mean_covariation=float(cov.mean()),
        spread_mean=float(spreads.mean()),
        spread_min=float(spreads.min()),
        spread_max=float(spreads.max()),
        inv_vol_path=inv.mean(axis=0),
        policy=policy,
        config={"model": model.name, "price_model": alpha_model.kind, "paths": paths,
                "steps": grid.steps, "horizon": grid.horizon, "seed": seed},
    )


def expected_profit(
    model: MMModel,
    alpha_model: AlphaModel,
    method: str = "quadrature",
    order: int = 48,
    paths: int = 2000,
    steps: int = 200,
    seed: int = 0,
    cache: MCache | None = None,
) -> float:
    """``E[int_0^T M(alpha_t) sigma_t^2 dt]``.

    ``"quadrature"`` integrates in time (and over the Gaussian law of
    ``p_t`` in the OU case) with Gauss rules; ``"mc"`` averages along
    simulated paths.
    """
    am = alpha_model
    T = am.maturity
    if method == "mc":
        grid = TimeGrid(T, steps)
        p = _integrate(am.price_spec(), grid, path_normals(seed, steps, paths), "auto")[:, :-1]
        a = am.alpha(grid.nodes[None, :-1], p)
        cache = cache or MCache(model, float(a.min()), float(a.max()))
        return float(np.mean(np.sum(cache.M(a) * am.vol(p) ** 2, axis=1) * grid.dt))
    if method != "quadrature":
        raise ValidationError(f"method must be 'quadrature' or 'mc', got {method!r}")
    if am.kind == "martingale":
        return M_and_m(model, 1.0).M * am.sigma**2 * T
    u, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * T * (u + 1.0)
    w = 0.5 * T * w
    if am.kind == "black_scholes":
        a = am.alpha(t, am.p0)
        Mv = np.array([M_and_m(model, x).M for x in a])
        second = am.p0**2 * np.exp((2.0 * am.mu + am.sigma**2) * t)
        return float(np.sum(w * Mv * am.sigma**2 * second))
    z, wz = np.polynomial.hermite_e.hermegauss(order)
    wz = wz / math.sqrt(2.0 * math.pi)
    var = am.sigma**2 * (1.0 - np.exp(-2.0 * am.kappa * t)) / (2.0 * am.kappa)
    p = am.p0 + np.sqrt(var)[:, None] * z[None, :]
    a = am.alpha(t[:, None], p)
    cache = cache or MCache(model, float(a.min()), float(a.max()), n=257)
    rate = cache.M(a) @ wz
    return float(np.sum(w * rate) * am.sigma**2)


def microscopic_inventory(rho: float, f: float, dp: np.ndarray, seed: int = 0) -> np.ndarray:
    """Trade-clock inventory moves ``-lam_{n+1} dp_n`` with ``E[lam] = rho f``, ``E[lam^2] = f^2``.

    ``lam`` is Gamma distributed (deterministic when ``rho = 1``). Used
    as a fixture: the predictable sums of ``dL dp`` and ``dL^2`` reproduce
    the continuum coefficients ``-rho f sigma^2`` and ``f^2 sigma^2``.
    """
    if not 0 < rho <= 1:
        raise ValidationError("fixture needs rho in (0, 1]")
    if f <= 0:
        raise ValidationError("fixture needs f > 0")
    dp = np.asarray(dp, dtype=float)
    if rho == 1:
        lam = np.full(dp.shape, f)
    else:
        shape = rho * rho / (1.0 - rho * rho)
        scale = f * (1.0 - rho * rho) / rho
        lam = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7]))).gamma(shape, scale, dp.shape)
    return -lam * dp

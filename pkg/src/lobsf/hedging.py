"""European option replication under execution costs and adverse selection.

The replication price solves, in time to maturity ``tau = T - t``,

    v_tau = g(p, sigma(p) v_pp) - sigma(p)^2 / 2 v_pp,   v(tau=0) = payoff,

with ``g(p, l) = sign(l) Phi_{|l|}(c(p, .))``. The replicating inventory is
``L = v_p`` with volatility ``l = sigma v_pp``. The equation is parabolic
only where ``sigma dg/dl - sigma^2/2 >= 0``; the solver measures that
margin at every step instead of assuming it.
"""

from __future__ import annotations

import enum
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, IllPosedError, ValidationError
from .ledger import write_csv
from .orderbook import CostFunction, g_function
from .stochastic import chunk_ranges, map_chunks, path_normals

__all__ = [
    "PdeProblem",
    "PdeSolution",
    "solve_pde",
    "EffectiveDiffusion",
    "linear_effective_diffusion",
    "ReplicationStrategy",
    "replication_strategy",
    "OrderClass",
    "classify_order_type",
    "ReplicationReport",
    "replication_error",
    "call_payoff",
    "put_payoff",
    "linear_payoff",
    "call_spread_payoff",
    "frictionless_spread",
    "default_domain",
    "black_scholes_call",
    "black_scholes_delta",
    "heat_kernel_call",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
CFL_SAFETY = 0.9


class ExtrapolationWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# payoffs and reference prices
# ---------------------------------------------------------------------------


def call_payoff(strike: float) -> Callable:
    return lambda p: np.maximum(np.asarray(p, dtype=float) - strike, 0.0)


def put_payoff(strike: float) -> Callable:
    return lambda p: np.maximum(strike - np.asarray(p, dtype=float), 0.0)


def linear_payoff(a: float, b: float) -> Callable:
    return lambda p: a * np.asarray(p, dtype=float) + b


def call_spread_payoff(k1: float, k2: float) -> Callable:
    """Long a call at ``k1``, short a call at ``k2 > k1``."""
    return lambda p: call_payoff(k1)(p) - call_payoff(k2)(p)


def frictionless_spread(sigma: Callable) -> Callable:
    """Spread ``sqrt(2 pi) sigma(p)`` at which costs and adverse selection cancel."""
    return lambda p: _SQRT_2PI * np.asarray(sigma(p), dtype=float)


def default_domain(p0: float, sigma: float, maturity: float, multiplicative: bool = True, width: float = 5.0):
    """Truncated price domain ``width`` standard deviations around ``p0``."""
    spread = width * sigma * math.sqrt(maturity)
    if multiplicative:
        return p0 * math.exp(-spread), p0 * math.exp(spread)
    return p0 - spread, p0 + spread


def black_scholes_call(p, strike, sigma, tau):
    p = np.asarray(p, dtype=float)
    if tau <= 0:
        return np.maximum(p - strike, 0.0)
    sd = sigma * math.sqrt(tau)
    d1 = (np.log(p / strike) + 0.5 * sd * sd) / sd
    return p * ndtr(d1) - strike * ndtr(d1 - sd)


def black_scholes_delta(p, strike, sigma, tau):
    sd = sigma * math.sqrt(tau)
    return ndtr((np.log(np.asarray(p, dtype=float) / strike) + 0.5 * sd * sd) / sd)


def heat_kernel_call(p, strike, variance):
    """``E[(p + sqrt(variance) Z - K)^+]`` (Bachelier call)."""
    p = np.asarray(p, dtype=float)
    if variance <= 0:
        return np.maximum(p - strike, 0.0)
    sd = math.sqrt(variance)
    d = (p - strike) / sd
    return (p - strike) * ndtr(d) + sd * np.exp(-0.5 * d * d) / _SQRT_2PI


class EffectiveDiffusion(NamedTuple):
    value: float
    ill_posed: bool


def linear_effective_diffusion(sigma: float, s: float) -> EffectiveDiffusion:
    """Diffusion coefficient ``sigma s / sqrt(2 pi) - sigma^2 / 2`` of the bid-ask PDE.

    This is the coefficient of ``v_pp`` in time to maturity; the backward
    problem is ill-posed when it is negative.
    """
    d = sigma * s / _SQRT_2PI - 0.5 * sigma * sigma
    return EffectiveDiffusion(float(d), bool(d < 0))


# ---------------------------------------------------------------------------
# problem and solution
# ---------------------------------------------------------------------------


@dataclass
class PdeProblem:
    """Replication-price PDE on ``[p_min, p_max] x [0, T]``.

    Exactly one of ``spread`` (``s(p)``, fills at the best quotes),
    ``cost`` (a level-independent book) or ``g`` (``g(p, l)``, vectorized)
    describes execution. ``n_p`` and ``n_t`` count space intervals and
    stored time slabs. ``substeps`` is the number of explicit steps per
    slab, or ``"auto"`` to pick the largest CFL-stable steps. When ``p0``
    is given the grid is shifted so that ``p0`` is a node.
    """

    payoff: Callable
    maturity: float
    sigma: Callable
    p_min: float
    p_max: float
    n_p: int = 400
    n_t: int = 400
    mu: Callable | None = None
    spread: Callable | None = None
    cost: CostFunction | None = None
    g: Callable | None = None
    boundary: str = "linear"
    substeps: int | str = "auto"
    allow_ill_posed: bool = False
    p0: float | None = None
    margin_tol: float = 1e-12

    def __post_init__(self):
        if not self.p_min < self.p_max:
            raise ValidationError(f"empty domain [{self.p_min}, {self.p_max}]")
        if self.n_p < 3 or self.n_t < 3:
            raise ValidationError("n_p and n_t must be >= 3")
        if self.maturity <= 0:
            raise ValidationError("maturity must be positive")
        if sum(x is not None for x in (self.spread, self.cost, self.g)) != 1:
            raise ValidationError("give exactly one of spread, cost or g")
        if self.boundary not in ("linear", "payoff"):
            raise ValidationError(f"boundary must be 'linear' or 'payoff', got {self.boundary!r}")
        if self.substeps != "auto" and (int(self.substeps) != self.substeps or self.substeps < 1):
            raise ValidationError(f"substeps must be a positive integer or 'auto', got {self.substeps!r}")
        if self.p0 is not None:
            dp = (self.p_max - self.p_min) / self.n_p
            j = round((self.p0 - self.p_min) / dp)
            if not 0 < j < self.n_p:
                raise ValidationError("p0 must lie inside the domain")
            self.p_min = self.p0 - j * dp
            self.p_max = self.p_min + self.n_p * dp

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def grid_p(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.n_p + 1)

    @property
    def grid_t(self) -> np.ndarray:
        return self.maturity * np.arange(self.n_t + 1) / self.n_t

    def g_eval(self, p, l):
        if self.spread is not None:
            return np.asarray(self.spread(p), dtype=float) * l / _SQRT_2PI
        if self.cost is not None:
            return g_function(self.cost, l)
        return np.asarray(self.g(p, l), dtype=float)

    def dg_dl(self, p, l):
        if self.spread is not None:
            return np.broadcast_to(np.asarray(self.spread(p), dtype=float) / _SQRT_2PI, np.shape(l))
        h = 1e-4 * (1.0 + np.abs(l))
        return (self.g_eval(p, l + h) - self.g_eval(p, l - h)) / (2.0 * h)

    def admissible_dtau(self, vpp: np.ndarray | None = None) -> float:
        """Largest CFL-stable explicit step at the given gamma (default: zero gamma)."""
        p = self.grid_p[1:-1]
        sig = np.asarray(self.sigma(p), dtype=float)
        vpp = np.zeros_like(p) if vpp is None else vpp
        d = np.abs(sig * self.dg_dl(p, sig * vpp) - 0.5 * sig * sig)
        dmax = float(np.max(d))
        return math.inf if dmax == 0 else self.dp**2 / (2.0 * dmax)


@dataclass(eq=False)
class PdeSolution:
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    v_p: np.ndarray
    v_pp: np.ndarray
    margins: np.ndarray
    steps: np.ndarray
    problem: PdeProblem = field(repr=False)

    @property
    def price(self) -> float:
        """``v(0, p0)`` (requires ``problem.p0``)."""
        if self.problem.p0 is None:
            raise ValidationError("problem has no p0")
        return float(np.interp(self.problem.p0, self.p, self.v[0]))

    def value(self, p, t_index: int = 0):
        return np.interp(p, self.p, self.v[t_index])

    def to_csv(self, path: str | Path) -> None:
        tt, pp = np.meshgrid(self.t, self.p, indexing="ij")
        write_csv(path, {"t": tt.ravel(), "p": pp.ravel(), "v": self.v.ravel(),
                         "v_p": self.v_p.ravel(), "v_pp": self.v_pp.ravel()})


def _second_diff(v, dp):
    return (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dp * dp)


def solve_pde(prob: PdeProblem) -> PdeSolution:
    """Explicit monotone time stepping of the replication PDE.

    Raises :class:`IllPosedError` where the parabolicity margin is negative
    (unless ``allow_ill_posed``) and :class:`ConfigurationError` when a
    fixed ``substeps`` breaks the CFL bound.
    """
    p = prob.grid_p
    dp = prob.dp
    pin = p[1:-1]
    sig = np.asarray(prob.sigma(pin), dtype=float)
    if np.any(sig < 0) or not np.all(np.isfinite(sig)):
        raise ValidationError("sigma must be finite and >= 0 on the domain")
    half_var = 0.5 * sig * sig
    pay_lo, pay_hi = (float(x) for x in prob.payoff(np.array([p[0], p[-1]])))
    nt = prob.n_t
    slab = prob.maturity / nt
    v = np.asarray(prob.payoff(p), dtype=float).copy()
    V = np.empty((nt + 1, len(p)))
    V[nt] = v
    margins = np.empty(nt)
    steps = np.zeros(nt, dtype=int)
    t_grid = prob.grid_t

    def rates(v):
        vpp = _second_diff(v, dp)
        l = sig * vpp
        d = sig * prob.dg_dl(pin, l) - half_var
        return prob.g_eval(pin, l) - half_var * vpp, d

    for i in range(nt - 1, -1, -1):
        remaining = slab
        worst = math.inf
        fixed = None if prob.substeps == "auto" else slab / int(prob.substeps)
        while remaining > 1e-15 * slab:
            rate, d = rates(v)
            k = int(np.argmin(d))
            worst = min(worst, float(d[k]))
            if d[k] < -prob.margin_tol and not prob.allow_ill_posed:
                raise IllPosedError(
                    f"parabolicity margin {d[k]:.6g} < 0 at p={pin[k]:.6g}, "
                    f"t={t_grid[i] + remaining:.6g}"
                )
            dmax = float(np.max(np.abs(d)))
            stable = math.inf if dmax == 0 else dp * dp / (2.0 * dmax)
            if fixed is not None:
                if fixed > stable * (1.0 + 1e-12):
                    raise ConfigurationError(
                        f"explicit step {fixed:.6g} exceeds the CFL bound; admissible dtau <= {stable:.6g}"
                    )
                h = min(fixed, remaining)
            else:
                h = min(remaining, CFL_SAFETY * stable)
                if h < remaining:
                    # spread the remaining slab evenly over the needed steps
                    h = remaining / math.ceil(remaining / h)
            v[1:-1] += h * rate
            if prob.boundary == "linear":
                v[0] = 2.0 * v[1] - v[2]
                v[-1] = 2.0 * v[-2] - v[-3]
            else:
                v[0], v[-1] = pay_lo, pay_hi
            remaining -= h
            steps[i] += 1
        margins[i] = worst
        V[i] = v

    v_p = np.gradient(V, dp, axis=1, edge_order=2)
    v_pp = np.zeros_like(V)
    v_pp[:, 1:-1] = (V[:, 2:] - 2.0 * V[:, 1:-1] + V[:, :-2]) / (dp * dp)
    if prob.boundary == "payoff":
        v_pp[:, 0], v_pp[:, -1] = v_pp[:, 1], v_pp[:, -2]
    return PdeSolution(t_grid, p, V, v_p, v_pp, margins, steps, prob)


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------


class _Bilinear:
    def __init__(self, t, p, z):
        self.t, self.p, self.z = t, p, z
        self.dp = p[1] - p[0]

    def slab(self, t):
        i = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2))
        w = (t - self.t[i]) / (self.t[i + 1] - self.t[i])
        return i, min(max(w, 0.0), 1.0)

    def at(self, t, p):
        i, wt = self.slab(t)
        x = np.clip((np.asarray(p, dtype=float) - self.p[0]) / self.dp, 0.0, len(self.p) - 1.0)
        near = np.round(x)
        x = np.where(np.abs(x - near) < 1e-9, near, x)
        j = np.minimum(x.astype(int), len(self.p) - 2)
        wp = x - j
        z0, z1 = self.z[i], self.z[i + 1]
        a = z0[j] * (1 - wp) + z0[j + 1] * wp
        b = z1[j] * (1 - wp) + z1[j + 1] * wp
        return a * (1 - wt) + b * wt


@dataclass(eq=False)
class ReplicationStrategy:
    """Inventory ``L = v_p``, its vol ``l = sigma v_pp`` and initial cash ``K0``."""

    solution: PdeSolution = field(repr=False)
    K0: float
    price: float
    p0: float

    def __post_init__(self):
        s = self.solution
        sig = np.asarray(s.problem.sigma(s.p), dtype=float)
        self._delta = _Bilinear(s.t, s.p, s.v_p)
        self._vol = _Bilinear(s.t, s.p, sig[None, :] * s.v_pp)

    def _warn(self, p):
        p = np.asarray(p)
        s = self.solution
        if np.any(p < s.p[0]) or np.any(p > s.p[-1]):
            warnings.warn("query outside the PDE grid; surfaces clamped to the boundary",
                          ExtrapolationWarning, stacklevel=3)

    def inventory(self, t, p):
        self._warn(p)
        return self._delta.at(t, p)

    def inventory_vol(self, t, p):
        self._warn(p)
        return self._vol.at(t, p)


def replication_strategy(sol: PdeSolution, p0: float | None = None) -> ReplicationStrategy:
    p0 = sol.problem.p0 if p0 is None else p0
    if p0 is None:
        raise ValidationError("replication needs an initial price p0")
    v0 = float(np.interp(p0, sol.p, sol.v[0]))
    d0 = float(np.interp(p0, sol.p, sol.v_p[0]))
    return ReplicationStrategy(sol, v0 - d0 * p0, v0, p0)


class OrderClass(enum.Enum):
    MARKET = "market"
    LIMIT = "limit"
    MIXED = "mixed"


def classify_order_type(sol: PdeSolution, rel_tol: float = 1e-8) -> OrderClass:
    """Order type needed by the hedge, from the sign of the gamma surface.

    All slices before maturity and interior nodes are inspected; gammas
    below ``rel_tol`` times the largest are treated as zero. A surface
    with no gamma of either sign needs no trading and is reported as
    market (the constraint ``l >= 0`` holds).
    """
    g = sol.v_pp[:-1, 1:-1]
    thr = rel_tol * float(np.max(np.abs(g))) if g.size else 0.0
    pos = bool(np.any(g > thr))
    neg = bool(np.any(g < -thr))
    if pos and neg:
        return OrderClass.MIXED
    return OrderClass.LIMIT if neg else OrderClass.MARKET


# ---------------------------------------------------------------------------
# Monte Carlo replication
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationReport:
    steps: int
    paths: int
    mean: float
    rms: float
    stderr: float
    quantiles: dict
    exited: int
    price: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def replication_error(
    sol: PdeSolution,
    prob: PdeProblem | None = None,
    paths: int = 1000,
    steps: int = 1000,
    seed: int = 0,
    p0: float | None = None,
    censor: str = "drop",
    chunk: int = 1000,
    threads: int = 1,
) -> ReplicationReport:
    """Terminal mismatch ``X_T - f(p_T)`` of the PDE hedge along simulated prices.

    Prices follow an Euler scheme for ``dp = mu dt + sigma dW``; wealth
    accumulates ``L dp + (sigma l - g(p, l)) dt`` with ``L, l`` read from
    the solution surfaces. Paths leaving the grid are counted; with
    ``censor="drop"`` they are excluded from the statistics, with
    ``"clamp"`` they are kept with clamped surfaces.
    """
    prob = sol.problem if prob is None else prob
    if prob.mu is None:
        raise ValidationError("replication needs the price drift mu(p)")
    if censor not in ("drop", "clamp"):
        raise ValidationError(f"censor must be 'drop' or 'clamp', got {censor!r}")
    strat = replication_strategy(sol, p0)
    T = prob.maturity
    dt = T / steps
    sq = math.sqrt(dt)
    lo, hi = sol.p[0], sol.p[-1]
    delta, vol = strat._delta, strat._vol

    def work(rows):
        z = path_normals(seed, steps, rows)
        p = np.full(len(rows), strat.p0)
        X = np.full(len(rows), strat.price)
        out = np.zeros(len(rows), dtype=bool)
        for k in range(steps):
            tk = k * dt
            L = delta.at(tk, p)
            l = vol.at(tk, p)
            sig = np.asarray(prob.sigma(p), dtype=float)
            dp = np.asarray(prob.mu(p), dtype=float) * dt + sig * sq * z[:, k]
            X += L * dp + (sig * l - prob.g_eval(p, l)) * dt
            p = p + dp
            out |= (p < lo) | (p > hi)
        return X - np.asarray(prob.payoff(p), dtype=float), out

    parts = map_chunks(work, chunk_ranges(paths, chunk), threads)
    err = np.concatenate([e for e, _ in parts])
    exited = np.concatenate([o for _, o in parts])
    kept = err[~exited] if censor == "drop" else err
    n = len(kept)
    q = np.quantile(kept, [0.01, 0.05, 0.5, 0.95, 0.99]) if n else np.full(5, np.nan)
    return ReplicationReport(
        steps=steps,
        paths=n,
        mean=float(kept.mean()) if n else math.nan,
        rms=float(np.sqrt(np.mean(kept**2))) if n else math.nan,
        stderr=float(kept.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        quantiles={k: float(v) for k, v in zip(("q01", "q05", "q50", "q95", "q99"), q)},
        exited=int(exited.sum()),
        price=strat.price,
    )

"""Self-financing wealth in trade clock and in the continuous limit.

Wealth is marked to the quoted price, ``X = p L + K``. Every ledger keeps
its three increments apart: the position term ``L dp``, the execution
cost term (collected with limit orders, paid with market orders) and the
price/inventory covariation term.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, NumericDomainError, ShapeError, ValidationError
from .orderbook import CostFunction
from .stochastic import (
    ItoProcessSpec,
    SamplePath,
    TimeGrid,
    _corr_on_grid,
    _integrate,
    chunk_ranges,
    correlated_normals,
    map_chunks,
)

__all__ = [
    "OrderType",
    "WealthLedger",
    "discrete_wealth",
    "continuous_wealth",
    "ConvergenceTable",
    "convergence_experiment",
    "ConsistencyReport",
    "consistency_check",
    "write_csv",
]


class OrderType(enum.Enum):
    LIMIT = "limit"
    MARKET = "market"

    @property
    def sign(self) -> int:
        """+1 when costs are collected (limit orders), -1 when paid."""
        return 1 if self is OrderType.LIMIT else -1

    @classmethod
    def parse(cls, value) -> "OrderType":
        return value if isinstance(value, cls) else cls(str(value).lower())


def write_csv(path: str | Path, columns: dict[str, np.ndarray]) -> None:
    """Write equal-length columns with 17 significant digits."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


@dataclass(frozen=True, eq=False)
class WealthLedger:
    """Wealth path and its decomposition on one grid.

    Component arrays are cumulative and start at 0, so
    ``X = X[0] + position + cost + covariation`` node by node.
    """

    grid: TimeGrid
    p: np.ndarray
    L: np.ndarray
    X: np.ndarray
    position: np.ndarray
    cost: np.ndarray
    covariation: np.ndarray

    @property
    def K(self) -> np.ndarray:
        return self.X - self.p * self.L

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "t": self.t,
            "X": self.X,
            "position_term": self.position,
            "cost_term": self.cost,
            "covariation_term": self.covariation,
            "K": self.K,
        }

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.columns())


def _cumulative(increments: np.ndarray) -> np.ndarray:
    out = np.zeros(increments.shape[:-1] + (increments.shape[-1] + 1,))
    np.cumsum(increments, axis=-1, out=out[..., 1:])
    return out


def _ledger(grid, p, L, K0, position, cost, covariation) -> WealthLedger:
    pos, cst, cov = _cumulative(position), _cumulative(cost), _cumulative(covariation)
    x0 = p[0] * L[0] + K0
    X = x0 + pos + cst + cov
    return WealthLedger(grid, p, L, X, pos, cst, cov)


def _same_grid(p: SamplePath, L: SamplePath) -> TimeGrid:
    if p.grid != L.grid:
        raise ShapeError(f"price and inventory grids differ: {p.grid} vs {L.grid}")
    return p.grid


def _require_even(cost: CostFunction) -> None:
    if not cost.is_even:
        raise ValidationError("asymmetric cost functions are not supported by the wealth equations")


def _as_values(x, n: int, name: str) -> np.ndarray:
    vals = x.values if isinstance(x, SamplePath) else np.asarray(x, dtype=float)
    vals = np.broadcast_to(vals, (n,)) if vals.ndim == 0 else vals
    if vals.shape != (n,):
        raise ShapeError(f"{name} has shape {vals.shape}, expected ({n},)")
    return vals


def discrete_cost_increments(dL: np.ndarray, cost: CostFunction, order: OrderType, scale: float) -> np.ndarray:
    """``± c^N(∓ dL)`` per trade, ``c^N(l) = c(sqrt(N) l) / N``."""
    cN = cost.rescale(scale)
    arg = -order.sign * dL
    ok = cN.in_domain(arg)
    if not np.all(ok):
        k = int(np.argmax(~ok.reshape(-1)) % dL.shape[-1])
        raise NumericDomainError(f"trade at step {k} exceeds the depth of the book")
    return order.sign * np.asarray(cN(arg), dtype=float)


def discrete_wealth(
    p: SamplePath,
    L: SamplePath,
    cost: CostFunction,
    order: OrderType | str = OrderType.LIMIT,
    scale: float | None = None,
    K0: float = 0.0,
) -> WealthLedger:
    """Trade-clock wealth ``dX = L dp ± c^N(∓ dL) + dp dL``.

    ``scale`` is the trade-clock scale ``N`` of the book; it defaults to
    ``1 / dt`` so that a grid on ``[0, 1]`` with ``N`` steps uses ``c^N``.
    """
    order = OrderType.parse(order)
    grid = _same_grid(p, L)
    _require_even(cost)
    scale = 1.0 / grid.dt if scale is None else float(scale)
    dp, dL = p.increments, L.increments
    Lk = L.values[:-1]
    return _ledger(
        grid, p.values, L.values, K0,
        Lk * dp, discrete_cost_increments(dL, cost, order, scale), dp * dL,
    )


def _check_sign(rate: np.ndarray, order: OrderType, t: np.ndarray) -> None:
    bad = ~(rate < 0) if order is OrderType.LIMIT else rate < 0
    if np.any(bad):
        k = int(np.argmax(bad))
        need = "< 0" if order is OrderType.LIMIT else ">= 0"
        raise ConsistencyError(
            f"{order.value} orders need d[p,L]/dt {need}; violated at node {k} (t={t[k]:.6g})"
        )


def continuous_wealth(
    p: SamplePath,
    L: SamplePath,
    cost: CostFunction,
    order: OrderType | str,
    l,
    sigma=None,
    rho=1.0,
    K0: float = 0.0,
    enforce_sign: bool = True,
) -> WealthLedger:
    """Continuous-limit wealth ``dX = L dp ± Phi_{|l|}(c) dt + d[L, p]``.

    ``l`` is the (signed) volatility of the inventory and ``sigma`` that of
    the price; ``rho`` is the correlation of their drivers, 1 when both are
    driven by the same Brownian motion. With ``sigma`` the covariation term
    is ``sigma l rho dt``; without it, the realized ``dp dL`` is used.

    Limit orders require ``l rho < 0`` at every node and market orders
    ``l rho >= 0``; ``enforce_sign=False`` skips the check.
    """
    order = OrderType.parse(order)
    grid = _same_grid(p, L)
    _require_even(cost)
    n = grid.steps + 1
    lv = _as_values(l, n, "l")[:-1]
    rv = _as_values(rho, n, "rho")[:-1]
    dt = grid.dt
    if enforce_sign:
        _check_sign(lv * rv, order, grid.nodes)
    dp, dL = p.increments, L.increments
    cost_inc = order.sign * np.asarray(cost.gaussian_mean(np.abs(lv)), dtype=float) * dt
    if sigma is None:
        cov_inc = dp * dL
    else:
        cov_inc = _as_values(sigma, n, "sigma")[:-1] * lv * rv * dt
    return _ledger(grid, p.values, L.values, K0, L.values[:-1] * dp, cost_inc, cov_inc)


# ---------------------------------------------------------------------------
# discrete -> continuous convergence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceTable:
    """Sup-deviation of trade-clock wealth from its continuous limit, per scale."""

    scales: tuple[int, ...]
    mean_sup: tuple[float, ...]
    rms_sup: tuple[float, ...]
    stderr: tuple[float, ...]
    n_paths: int
    reference_steps: int

    def rate(self) -> float:
        """Least-squares decay exponent of the RMS deviation in ``N``."""
        slope = np.polyfit(np.log(self.scales), np.log(self.rms_sup), 1)[0]
        return float(-slope)

    def rows(self) -> list[dict]:
        return [
            {"N": n, "mean_sup": m, "rms_sup": r, "stderr": s}
            for n, m, r, s in zip(self.scales, self.mean_sup, self.rms_sup, self.stderr)
        ]


def convergence_experiment(
    p_spec: ItoProcessSpec,
    L_spec: ItoProcessSpec,
    corr,
    cost: CostFunction,
    order: OrderType | str,
    scales: Sequence[int],
    n_paths: int,
    seed: int,
    horizon: float = 1.0,
    ref_factor: int = 4,
    chunk: int = 16,
    threads: int = 1,
) -> ConvergenceTable:
    """Compare ``X^N_{floor(Nt)}`` with the continuous wealth on a finer grid.

    The reference grid has ``ref_factor * max(scales)`` steps, every scale
    must divide it, and ``X^N`` uses the reference path sampled at ``N``
    points. The inventory vol fed to the continuous ledger is
    ``L_spec.vol`` with the sign of ``corr``; the covariation rate is
    ``sigma l corr``.
    """
    order = OrderType.parse(order)
    _require_even(cost)
    scales = tuple(int(s) for s in scales)
    if list(scales) != sorted(set(scales)):
        raise ValidationError("scales must be strictly increasing")
    ref = TimeGrid(horizon, ref_factor * scales[-1])
    for s in scales:
        ref.subsample(s)
    rho = _corr_on_grid(corr, ref)
    t = ref.nodes

    def work(paths: range) -> np.ndarray:
        z1, z2 = correlated_normals(corr, ref, seed, paths)
        P = _integrate(p_spec, ref, z1, "auto")
        L = _integrate(L_spec, ref, z2, "auto")
        sig = np.broadcast_to(p_spec.vol(t[:-1], P[:, :-1]), P[:, :-1].shape)
        lv = np.broadcast_to(L_spec.vol(t[:-1], L[:, :-1]), L[:, :-1].shape)
        cov_rate = sig * lv * rho
        cost_rate = order.sign * np.asarray(cost.gaussian_mean(lv), dtype=float)
        inc = L[:, :-1] * np.diff(P, axis=1) + (cost_rate + cov_rate) * ref.dt
        X = _cumulative(inc)
        sups = np.empty((len(paths), len(scales)))
        for j, n in enumerate(scales):
            stride = ref.steps // n
            Pn, Ln = P[:, ::stride], L[:, ::stride]
            dp, dL = np.diff(Pn, axis=1), np.diff(Ln, axis=1)
            xinc = Ln[:, :-1] * dp + discrete_cost_increments(dL, cost, order, n / horizon) + dp * dL
            Xn = _cumulative(xinc)
            held = np.repeat(Xn[:, :-1], stride, axis=1)
            held = np.concatenate([held, Xn[:, -1:]], axis=1)
            sups[:, j] = np.max(np.abs(held - X), axis=1)
        return sups

    parts = map_chunks(work, chunk_ranges(n_paths, chunk), threads)
    sups = np.concatenate(parts, axis=0)
    return ConvergenceTable(
        scales=scales,
        mean_sup=tuple(float(v) for v in sups.mean(axis=0)),
        rms_sup=tuple(float(v) for v in np.sqrt((sups**2).mean(axis=0))),
        stderr=tuple(float(v) for v in sups.std(axis=0, ddof=1) / math.sqrt(n_paths))
        if n_paths > 1 else tuple(0.0 for _ in scales),
        n_paths=n_paths,
        reference_steps=ref.steps,
    )


# ---------------------------------------------------------------------------
# consistency of limit-order trading
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    is_consistent: bool
    violations: list[tuple[int, int]]
    increments: np.ndarray = field(repr=False)

    @property
    def pass_rate(self) -> float:
        return float(np.mean(self.increments < 0)) if len(self.increments) else 1.0


def consistency_check(p: SamplePath, L: SamplePath, window: int) -> ConsistencyReport:
    """Realized ``[p, L]`` increments over consecutive windows of ``window`` steps.

    The pair is consistent iff every increment is strictly negative. A
    trailing partial window is ignored. Violations are ``(start, end)``
    node pairs.
    """
    grid = _same_grid(p, L)
    if window < 1:
        raise ValidationError("a window spans at least two nodes (one step)")
    if window > grid.steps:
        raise ShapeError(f"window of {window} steps exceeds a path of {grid.steps} steps")
    prod = p.increments * L.increments
    n_win = grid.steps // window
    inc = prod[: n_win * window].reshape(n_win, window).sum(axis=1)
    bad = [(k * window, (k + 1) * window) for k in np.nonzero(~(inc < 0))[0]]
    return ConsistencyReport(not bad, bad, inc)

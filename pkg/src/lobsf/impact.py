"""Structural price impact: prices from trades, trades from prices, and their
diffusion limits.

At trade-clock scale ``N`` the rescaled book gives ``dp = lam (c^N)'(-dL)``
or equivalently ``dL = -(gamma^N)'(dp / lam)``; ``lam`` measures how much
of the book impact survives price recovery.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import UnsupportedModelError, ValidationError
from .ledger import WealthLedger, _as_values, _ledger
from .orderbook import CostFunction, Flat, ShapeSpec, legendre_transform
from .stochastic import SamplePath, TimeGrid, chunk_ranges, gaussian_expect, map_chunks, path_normals

__all__ = [
    "RecoveryWarning",
    "ImpactBookModel",
    "ImpactLimitCoeffs",
    "ImpactLimitReport",
    "impact_limit_experiment",
    "price_from_trades",
    "trades_from_price",
    "limit_coeffs_from_inventory",
    "limit_coeffs_from_price",
    "LimitLawSpec",
    "LimitLawReport",
    "verify_limit_law",
    "flat_book_wealth",
    "ManipulationResult",
    "manipulation_profit",
    "bridge_inventory",
]


class RecoveryWarning(RuntimeWarning):
    """Recovery parameter above 1, outside the structural model's range."""


@dataclass(frozen=True)
class ImpactBookModel:
    shape: ShapeSpec
    recovery: float

    def __post_init__(self):
        if not (self.recovery > 0 and math.isfinite(self.recovery)):
            raise ValidationError(f"price recovery must be positive, got {self.recovery}")
        if self.recovery > 1:
            warnings.warn(f"recovery {self.recovery} > 1 lies outside (0, 1]", RecoveryWarning, stacklevel=3)

    @property
    def cost(self) -> CostFunction:
        return legendre_transform(self.shape)

    @property
    def warnings(self) -> tuple[str, ...]:
        return (f"recovery {self.recovery} > 1 lies outside (0, 1]",) if self.recovery > 1 else ()


def _scale(grid: TimeGrid, scale):
    return 1.0 / grid.dt if scale is None else float(scale)


def price_from_trades(L: SamplePath, book: ImpactBookModel, p0: float, scale: float | None = None) -> SamplePath:
    """Price path implied by inventory ``L``: ``dp = lam (c^N)'(-dL)``."""
    cN = book.cost.rescale(_scale(L.grid, scale))
    dp = book.recovery * np.asarray(cN.d1(-L.increments), dtype=float)
    return SamplePath(L.grid, p0 + np.concatenate(([0.0], np.cumsum(dp))), L.seed)


def trades_from_price(
    p: SamplePath, shape: ShapeSpec, recovery: float, L0: float, scale: float | None = None
) -> SamplePath:
    """Inventory path implied by prices: ``dL = -(gamma^N)'(dp / lam)``."""
    gN = shape.rescale(_scale(p.grid, scale))
    dL = -np.asarray(gN.d1(p.increments / recovery), dtype=float)
    return SamplePath(p.grid, L0 + np.concatenate(([0.0], np.cumsum(dL))), p.seed)


# ---------------------------------------------------------------------------
# limit coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImpactLimitCoeffs:
    drift: float
    vol: float
    covariation: float


def limit_coeffs_from_inventory(b: float, l: float, cost: CostFunction, recovery: float) -> ImpactLimitCoeffs:
    """Price dynamics in the limit when the inventory has drift ``b`` and vol ``l``.

    drift ``-lam b Phi_l(c'')``, vol ``lam sqrt(Phi_l(c'^2))`` and
    ``d[p, L]/dt = -lam Phi_l(id c')``.
    """
    a = abs(l)
    bp = cost.breakpoints
    drift = -recovery * b * gaussian_expect(cost.d2, a, breakpoints=bp)
    vol = recovery * math.sqrt(gaussian_expect(lambda y: np.asarray(cost.d1(y)) ** 2, a, breakpoints=bp))
    cov = -recovery * gaussian_expect(lambda y: y * np.asarray(cost.d1(y)), a, breakpoints=bp)
    return ImpactLimitCoeffs(float(drift) + 0.0, float(vol), float(cov) + 0.0)


def limit_coeffs_from_price(mu: float, sigma: float, shape: ShapeSpec, recovery: float) -> ImpactLimitCoeffs:
    """Inventory dynamics in the limit when the price has drift ``mu`` and vol ``sigma``.

    drift ``-(mu/lam) Phi_sigma(gamma''(./lam))``,
    vol ``sqrt(Phi_sigma(gamma'(./lam)^2))``,
    ``d[p, L]/dt = -Phi_sigma(id gamma'(./lam))``.
    """
    a = abs(sigma)
    lam = recovery
    drift = -(mu / lam) * gaussian_expect(lambda y: shape.d2(y / lam), a)
    vol = math.sqrt(gaussian_expect(lambda y: np.asarray(shape.d1(y / lam)) ** 2, a))
    cov = -gaussian_expect(lambda y: y * np.asarray(shape.d1(y / lam)), a)
    return ImpactLimitCoeffs(float(drift) + 0.0, float(vol), float(cov) + 0.0)


@dataclass(frozen=True)
class ImpactLimitReport:
    theory: ImpactLimitCoeffs
    drift: float
    drift_se: float
    vol: float
    vol_se: float
    covariation: float
    covariation_se: float
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)


def impact_limit_experiment(
    book: ImpactBookModel,
    b: float,
    l: float,
    steps: int,
    paths: int,
    seed: int = 0,
    horizon: float = 1.0,
    chunk: int = 20,
    threads: int = 1,
) -> ImpactLimitReport:
    """Price statistics generated by a Brownian inventory ``dL = b dt + l dW``.

    Rates are per unit time: drift from ``p_T - p_0``, vol from the
    realized variance of ``p`` and covariation from ``[p, L]_T``.
    """
    if steps < 1 or paths < 2:
        raise ValidationError("need steps >= 1 and paths >= 2")
    dt = horizon / steps
    cN = book.cost.rescale(steps / horizon)
    lam = book.recovery

    def work(rows):
        dL = b * dt + l * math.sqrt(dt) * path_normals(seed, steps, rows)
        dp = lam * np.asarray(cN.d1(-dL), dtype=float)
        return np.column_stack([dp.sum(axis=1), (dp * dp).sum(axis=1), (dp * dL).sum(axis=1)]) / horizon

    out = np.concatenate(map_chunks(work, chunk_ranges(paths, chunk), threads))
    root = math.sqrt(paths)
    mean = out.mean(axis=0)
    se = out.std(axis=0, ddof=1) / root
    vol = math.sqrt(mean[1])
    return ImpactLimitReport(
        theory=limit_coeffs_from_inventory(b, l, book.cost, lam),
        drift=float(mean[0]),
        drift_se=float(se[0]),
        vol=vol,
        vol_se=float(se[1] / (2.0 * vol)) if vol > 0 else 0.0,
        covariation=float(mean[2]),
        covariation_se=float(se[2]),
        config={"b": b, "l": l, "recovery": lam, "steps": steps, "paths": paths,
                "seed": seed, "horizon": horizon},
    )


# ---------------------------------------------------------------------------
# functional limit theorem check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitLawSpec:
    """Constant-coefficient setup for ``N^{-1/2} sum F(sqrt(N) dY)``.

    ``Y`` has drift ``b`` and vol ``sigma`` on ``[0, horizon]`` with
    ``steps`` increments; the trade-clock scale is ``steps / horizon``.
    ``growth`` records the polynomial-growth bound ``(C, k)`` with
    ``|F|, |F'| <= C (1 + |y|^k)``; it is checked on a sample grid.
    """

    F: Callable = field(repr=False)
    dF: Callable = field(repr=False)
    b: float
    sigma: float
    steps: int
    paths: int
    seed: int = 0
    horizon: float = 1.0
    growth: tuple[float, float] = (1e3, 8.0)
    name: str = "F"

    MIN_STEPS = 100
    MIN_PATHS = 100

    def validate(self) -> None:
        if self.steps < self.MIN_STEPS or self.paths < self.MIN_PATHS:
            raise ValidationError(
                f"need steps >= {self.MIN_STEPS} and paths >= {self.MIN_PATHS}, got {self.steps}, {self.paths}"
            )
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        y = np.linspace(0.05, 6.0, 120)
        f_pos, f_neg = np.asarray(self.F(y), float), np.asarray(self.F(-y), float)
        if not np.allclose(f_neg, -f_pos, rtol=1e-10, atol=1e-12):
            raise ValidationError(f"test function {self.name} is not odd")
        c, k = self.growth
        bound = c * (1.0 + np.abs(y) ** k)
        if np.any(np.abs(f_pos) > bound) or np.any(np.abs(np.asarray(self.dF(y), float)) > bound):
            raise ValidationError(f"test function {self.name} exceeds its growth bound {self.growth}")


@dataclass(frozen=True)
class LimitLawReport:
    theory: dict
    sample: dict
    stderr: dict
    errors: dict
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def verify_limit_law(spec: LimitLawSpec, chunk: int = 200, threads: int = 1) -> LimitLawReport:
    """Monte Carlo moments of the normalized sum against the limit law at ``horizon``.

    Theory: mean ``b Phi_sigma(F') t``, variance ``Phi_sigma(F^2) t`` and
    covariation with ``Y`` equal to ``Phi_sigma(id F) t``.
    """
    spec.validate()
    n, t = spec.steps, spec.horizon
    dt = t / n
    scale = n / t
    root = math.sqrt(scale)

    def work(paths):
        z = path_normals(spec.seed, n, paths)
        dy = spec.b * dt + spec.sigma * math.sqrt(dt) * z
        terms = np.asarray(spec.F(root * dy), dtype=float) / root
        return np.column_stack([terms.sum(axis=1), (terms * dy).sum(axis=1)])

    out = np.concatenate(map_chunks(work, chunk_ranges(spec.paths, chunk), threads))
    stat, cov = out[:, 0], out[:, 1]
    m = spec.paths
    mean = float(stat.mean())
    var = float(stat.var(ddof=1))
    centred = stat - mean
    m4 = float(np.mean(centred**4))
    theory = {
        "mean": spec.b * gaussian_expect(spec.dF, spec.sigma) * t,
        "variance": gaussian_expect(lambda y: np.asarray(spec.F(y)) ** 2, spec.sigma) * t,
        "covariation": gaussian_expect(lambda y: y * np.asarray(spec.F(y)), spec.sigma) * t,
    }
    sample = {"mean": mean, "variance": var, "covariation": float(cov.mean())}
    stderr = {
        "mean": math.sqrt(var / m),
        "variance": math.sqrt(max(m4 - var**2, 0.0) / m),
        "covariation": float(cov.std(ddof=1) / math.sqrt(m)),
    }
    errors = {k: sample[k] - theory[k] for k in theory}
    config = {"F": spec.name, "b": spec.b, "sigma": spec.sigma, "steps": n, "paths": m,
              "seed": spec.seed, "horizon": t}
    return LimitLawReport({k: float(v) for k, v in theory.items()}, sample, stderr, errors, config)


# ---------------------------------------------------------------------------
# flat book special case and price manipulation
# ---------------------------------------------------------------------------


def _flat(book: ImpactBookModel) -> Flat:
    if not isinstance(book.shape, Flat):
        raise UnsupportedModelError("the linear impact model needs a flat order book")
    return book.shape


def flat_book_wealth(
    L: SamplePath, l, book: ImpactBookModel, p0: float, K0: float = 0.0, scale: float | None = None
) -> WealthLedger:
    """Liquidity provider wealth on a flat book with linear impact.

    The price follows ``dp = -(lam/m) dL``; the ledger collects
    ``l^2/(2m) dt`` in the cost term and ``-lam l^2/m dt`` in the
    covariation term, so the net rate is ``(1/2 - lam) l^2 / m``.
    """
    m = _flat(book).m
    grid = L.grid
    p = price_from_trades(L, book, p0, scale)
    lv = _as_values(l, grid.steps + 1, "l")[:-1]
    rate = lv**2 / m * grid.dt
    return _ledger(grid, p.values, L.values, K0,
                   L.values[:-1] * p.increments, 0.5 * rate, -book.recovery * rate)


def bridge_inventory(l: np.ndarray, grid: TimeGrid, z: np.ndarray, L0: float = 0.0) -> np.ndarray:
    """Round-trip inventories ``L_T = L_0`` with instantaneous vol ``l``.

    ``L = L0 + I_t - (Q_t / Q_T) I_T`` with ``I = int l dW`` and
    ``Q = int l^2 dt`` on the left-point grid; ``z`` has shape (M, N).
    """
    lk = np.broadcast_to(np.asarray(l, dtype=float), (grid.steps + 1,))[:-1]
    inc = lk * math.sqrt(grid.dt) * z
    I = np.concatenate([np.zeros((z.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)
    Q = np.concatenate([[0.0], np.cumsum(lk**2 * grid.dt)])
    L = L0 + I - (Q / Q[-1])[None, :] * I[:, -1:]
    L[:, -1] = L0
    return L


@dataclass(frozen=True)
class ManipulationResult:
    recovery: float
    closed_form: float
    mc_mean: float | None = None
    mc_stderr: float | None = None
    paths: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def admits_manipulation(self) -> bool:
        return self.closed_form > 0


def manipulation_profit(
    book: ImpactBookModel,
    l: float | Callable = 1.0,
    horizon: float = 1.0,
    paths: int = 0,
    steps: int = 2000,
    seed: int = 0,
    p0: float = 100.0,
) -> ManipulationResult:
    """Expected round-trip gain ``(1 - lam)/2 int l^2/m dt`` on a flat book.

    With ``paths > 0`` the gain is also estimated by running
    :func:`flat_book_wealth` over Brownian-bridge inventories.
    """
    m = _flat(book).m
    lam = book.recovery
    if callable(l):
        integral = quad(lambda s: float(l(s)) ** 2, 0.0, horizon, limit=200)[0]
    else:
        integral = float(l) ** 2 * horizon
    closed = 0.5 * (1.0 - lam) * integral / m
    if paths <= 0:
        return ManipulationResult(lam, closed, warnings=book.warnings)
    grid = TimeGrid(horizon, steps)
    lpath = l(grid.nodes) if callable(l) else np.full(grid.steps + 1, float(l))
    gains = np.empty(paths)
    for rows in chunk_ranges(paths, 256):
        Ls = bridge_inventory(lpath, grid, path_normals(seed, steps, rows))
        for i, row in zip(rows, Ls):
            led = flat_book_wealth(SamplePath(grid, row, seed), lpath, book, p0)
            gains[i] = led.X[-1] - led.X[0]
    return ManipulationResult(
        lam, closed, float(gains.mean()), float(gains.std(ddof=1) / math.sqrt(paths)), paths, book.warnings
    )

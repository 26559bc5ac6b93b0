"""Itô path generation, realized covariation and Gaussian expectations.

Paths are generated from counter-based Philox streams keyed by
``(seed, stream, path_index)``, so any single path can be regenerated
without simulating the ones before it and batches may be produced in
any order or in parallel.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NumericDomainError, ShapeError, ValidationError

__all__ = [
    "TimeGrid",
    "ItoProcessSpec",
    "Custom",
    "GBM",
    "OU",
    "MartingaleConstVol",
    "SamplePath",
    "GaussianFunctional",
    "path_normals",
    "simulate_path",
    "simulate_paths",
    "correlated_pair",
    "correlated_paths",
    "quadratic_covariation",
    "realized_covariation",
    "gaussian_expect",
    "map_chunks",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / N`` on ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"steps must be a positive integer, got {self.steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValidationError(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def __len__(self) -> int:
        return self.steps + 1

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * int(factor))

    def subsample(self, steps: int) -> "TimeGrid":
        """Coarser grid whose nodes are a subset of this one."""
        if self.steps % steps:
            raise ShapeError(f"{steps} steps do not nest in a grid of {self.steps} steps")
        return TimeGrid(self.horizon, steps)


# ---------------------------------------------------------------------------
# process specifications
# ---------------------------------------------------------------------------


class ItoProcessSpec:
    """Scalar Itô process ``dX = drift(t, X) dt + vol(t, X) dW``.

    Coefficient callables must accept a float ``t`` and an ndarray ``x``
    and return arrays broadcastable to ``x``.
    """

    x0: float

    def drift(self, t, x):
        raise NotImplementedError

    def vol(self, t, x):
        raise NotImplementedError

    def exact_step(self, x: np.ndarray, dt: float, z: np.ndarray) -> np.ndarray | None:
        """Exact transition ``X_{t+dt} | X_t = x`` driven by ``z``, if available."""
        return None


@dataclass(frozen=True)
class Custom(ItoProcessSpec):
    x0: float
    drift_fn: Callable = field(repr=False)
    vol_fn: Callable = field(repr=False)

    def drift(self, t, x):
        return self.drift_fn(t, x)

    def vol(self, t, x):
        return self.vol_fn(t, x)


@dataclass(frozen=True)
class GBM(ItoProcessSpec):
    x0: float
    mu: float
    sigma: float

    def drift(self, t, x):
        return self.mu * x

    def vol(self, t, x):
        return self.sigma * x

    def exact_step(self, x, dt, z):
        return x * np.exp((self.mu - 0.5 * self.sigma**2) * dt + self.sigma * math.sqrt(dt) * z)

    def mean(self, t: float) -> float:
        return self.x0 * math.exp(self.mu * t)


@dataclass(frozen=True)
class OU(ItoProcessSpec):
    """Mean-reverting ``dX = kappa (mean - X) dt + sigma dW``."""

    x0: float
    kappa: float
    mean_level: float
    sigma: float

    def drift(self, t, x):
        return self.kappa * (self.mean_level - x)

    def vol(self, t, x):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)

    def exact_step(self, x, dt, z):
        decay = math.exp(-self.kappa * dt)
        sd = self.sigma * math.sqrt(-math.expm1(-2.0 * self.kappa * dt) / (2.0 * self.kappa))
        return self.mean_level + (x - self.mean_level) * decay + sd * z

    def mean(self, t: float) -> float:
        return self.mean_level + math.exp(-self.kappa * t) * (self.x0 - self.mean_level)

    def variance(self, t: float) -> float:
        return self.sigma**2 * -math.expm1(-2.0 * self.kappa * t) / (2.0 * self.kappa)


@dataclass(frozen=True)
class MartingaleConstVol(ItoProcessSpec):
    x0: float
    sigma: float

    def drift(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def vol(self, t, x):
        return np.full_like(np.asarray(x, dtype=float), self.sigma)

    def exact_step(self, x, dt, z):
        return x + self.sigma * math.sqrt(dt) * z


@dataclass(frozen=True, eq=False)
class SamplePath:
    grid: TimeGrid
    values: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.steps + 1,):
            raise ShapeError(
                f"path has shape {values.shape}, grid needs ({self.grid.steps + 1},)"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def __len__(self) -> int:
        return len(self.values)


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------


def _generator(seed: int, stream: int, path_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(stream), int(path_index)])
    return np.random.Generator(np.random.Philox(ss))


def path_normals(
    seed: int, n_steps: int, paths: int | Iterable[int], stream: int = 0
) -> np.ndarray:
    """Standard normals of shape ``(n_paths, n_steps)``.

    Row ``i`` depends only on ``(seed, stream, paths[i])``.
    """
    idx = range(paths) if isinstance(paths, (int, np.integer)) else list(paths)
    out = np.empty((len(idx), n_steps))
    for row, k in enumerate(idx):
        out[row] = _generator(seed, stream, k).standard_normal(n_steps)
    return out


def map_chunks(fn: Callable, chunks: Sequence, threads: int = 1) -> list:
    """Apply ``fn`` to every chunk, preserving chunk order in the result."""
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def chunk_ranges(n: int, size: int) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------


def _check_finite(arr, name, t, k):
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{name} is not finite at t_k={t:.6g} (step {k})")


def _integrate(spec: ItoProcessSpec, grid: TimeGrid, z: np.ndarray, scheme: str) -> np.ndarray:
    """Integrate ``spec`` along normals ``z`` of shape (M, N)."""
    m, n = z.shape
    if n != grid.steps:
        raise ShapeError(f"{n} normals per path for a grid of {grid.steps} steps")
    dt = grid.dt
    x = np.empty((m, n + 1))
    x[:, 0] = spec.x0
    use_exact = scheme in ("auto", "exact") and spec.exact_step(x[:, :1], dt, z[:, :1]) is not None
    if scheme == "exact" and not use_exact:
        raise ValidationError(f"{type(spec).__name__} has no exact transition")
    if use_exact:
        for k in range(n):
            x[:, k + 1] = spec.exact_step(x[:, k], dt, z[:, k])
        return x
    sqdt = math.sqrt(dt)
    t = grid.nodes
    for k in range(n):
        xk = x[:, k]
        mu = np.broadcast_to(spec.drift(t[k], xk), xk.shape)
        sig = np.broadcast_to(spec.vol(t[k], xk), xk.shape)
        _check_finite(mu, "drift", t[k], k)
        _check_finite(sig, "vol", t[k], k)
        if np.any(sig < 0):
            raise NumericDomainError(f"negative vol at t_k={t[k]:.6g} (step {k})")
        x[:, k + 1] = xk + mu * dt + sig * sqdt * z[:, k]
    return x


def simulate_paths(
    spec: ItoProcessSpec,
    grid: TimeGrid,
    seed: int,
    n_paths: int | Iterable[int],
    scheme: str = "auto",
    stream: int = 0,
) -> np.ndarray:
    """Batch of paths, shape ``(n_paths, N + 1)``.

    ``scheme`` is ``"auto"`` (exact transition where the kind has one),
    ``"exact"`` or ``"euler"``.
    """
    z = path_normals(seed, grid.steps, n_paths, stream=stream)
    return _integrate(spec, grid, z, scheme)


def simulate_path(
    spec: ItoProcessSpec,
    grid: TimeGrid,
    seed: int,
    path_index: int = 0,
    scheme: str = "auto",
) -> SamplePath:
    values = simulate_paths(spec, grid, seed, [path_index], scheme=scheme)[0]
    return SamplePath(grid, values, seed)


def _corr_on_grid(corr, grid: TimeGrid) -> np.ndarray:
    t = grid.nodes[:-1]
    rho = np.broadcast_to(np.asarray(corr(t) if callable(corr) else corr, dtype=float), t.shape)
    if not np.all(np.isfinite(rho)) or np.any(np.abs(rho) > 1.0):
        bad = int(np.argmax(~np.isfinite(rho) | (np.abs(rho) > 1.0)))
        raise NumericDomainError(f"|corr| > 1 at t_k={t[bad]:.6g} (step {bad})")
    return rho


def correlated_normals(corr, grid: TimeGrid, seed: int, paths) -> tuple[np.ndarray, np.ndarray]:
    """Driver normals with per-step correlation ``corr(t_k)``."""
    rho = _corr_on_grid(corr, grid)
    z1 = path_normals(seed, grid.steps, paths, stream=0)
    zperp = path_normals(seed, grid.steps, paths, stream=1)
    z2 = rho * z1 + np.sqrt(1.0 - rho**2) * zperp
    return z1, z2


def correlated_paths(spec1, spec2, corr, grid, seed, n_paths, scheme="auto"):
    """Batch version of :func:`correlated_pair`; returns two (M, N+1) arrays."""
    z1, z2 = correlated_normals(corr, grid, seed, n_paths)
    return _integrate(spec1, grid, z1, scheme), _integrate(spec2, grid, z2, scheme)


def correlated_pair(
    spec1: ItoProcessSpec,
    spec2: ItoProcessSpec,
    corr: float | Callable,
    grid: TimeGrid,
    seed: int,
    path_index: int = 0,
    scheme: str = "auto",
) -> tuple[SamplePath, SamplePath]:
    """Two paths whose drivers have correlation ``corr(t_k)`` on step ``k``.

    ``corr`` may be a constant or a vectorized function of time. With
    ``corr = ±1`` the second driver is exactly ``±`` the first.
    """
    a, b = correlated_paths(spec1, spec2, corr, grid, seed, [path_index], scheme)
    return SamplePath(grid, a[0], seed), SamplePath(grid, b[0], seed)


# ---------------------------------------------------------------------------
# covariation
# ---------------------------------------------------------------------------


def realized_covariation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Running sums ``sum_{k<j} da_k db_k`` along the last axis (starts at 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"covariation of shapes {a.shape} and {b.shape}")
    prod = np.diff(a, axis=-1) * np.diff(b, axis=-1)
    out = np.zeros(a.shape)
    np.cumsum(prod, axis=-1, out=out[..., 1:])
    return out


def quadratic_covariation(a: SamplePath, b: SamplePath) -> SamplePath:
    if a.grid != b.grid:
        raise ShapeError(f"grids differ: {a.grid} vs {b.grid}")
    return SamplePath(a.grid, realized_covariation(a.values, b.values))


# ---------------------------------------------------------------------------
# Gaussian functional
# ---------------------------------------------------------------------------

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class GaussianFunctional:
    """Fixed rule for ``Phi_a(g) = E[g(a Z)]``, ``Z ~ N(0, 1)``.

    Each half-line ``[0, z_max]`` carries an ``order``-point Gauss-Legendre
    rule weighted by the normal density, so integrands with a kink at the
    origin (proportional costs, ``sign``) are integrated to machine
    precision. Further kinks can be passed as ``breakpoints`` (in units of
    ``y = a z``); the line is then split there as well.
    """

    def __init__(self, order: int = 64):
        if order < 2:
            raise ValidationError(f"quadrature order must be >= 2, got {order}")
        self.order = int(order)
        self.z_max = min(12.0, 6.0 + order / 8.0)
        x, w = np.polynomial.legendre.leggauss(self.order)
        self._x, self._w = x, w
        self.nodes = 0.5 * self.z_max * (x + 1.0)
        self.weights = 0.5 * self.z_max * w * _INV_SQRT_2PI * np.exp(-0.5 * self.nodes**2)

    def _piece(self, lo: float, hi: float):
        z = lo + 0.5 * (hi - lo) * (self._x + 1.0)
        return z, 0.5 * (hi - lo) * self._w * _INV_SQRT_2PI * np.exp(-0.5 * z * z)

    def expect(self, g: Callable, a, breakpoints: Sequence[float] = ()):
        a_arr = np.asarray(a, dtype=float)
        if np.any(a_arr < 0) or not np.all(np.isfinite(a_arr)):
            raise ValidationError("standard deviation parameter must be finite and >= 0")
        flat = a_arr.reshape(-1)
        out = np.empty(flat.shape)
        zero = flat == 0.0
        if np.any(zero):
            g0 = float(np.asarray(g(np.zeros(1)), dtype=float).reshape(-1)[0])
            if not math.isfinite(g0):
                raise NumericDomainError("integrand is not finite at 0")
            out[zero] = g0
        pos = ~zero
        if np.any(pos):
            if len(breakpoints):
                out[pos] = [self._expect_split(g, s, breakpoints) for s in flat[pos]]
            else:
                y = flat[pos, None] * self.nodes[None, :]
                vals = np.asarray(g(y), dtype=float) + np.asarray(g(-y), dtype=float)
                if not np.all(np.isfinite(vals)):
                    raise NumericDomainError("integrand is not finite at a quadrature node")
                out[pos] = vals @ self.weights
        return float(out[0]) if a_arr.ndim == 0 else out.reshape(a_arr.shape)

    def _expect_split(self, g, a, breakpoints):
        cuts = {0.0, -self.z_max, self.z_max}
        cuts.update(b / a for b in breakpoints if abs(b / a) < self.z_max)
        cuts = sorted(cuts)
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            z, w = self._piece(lo, hi)
            vals = np.asarray(g(a * z), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise NumericDomainError("integrand is not finite at a quadrature node")
            total += float(vals @ w)
        return total


@lru_cache(maxsize=8)
def _functional(order: int) -> GaussianFunctional:
    return GaussianFunctional(order)


def gaussian_expect(g: Callable, a, order: int = 64, breakpoints: Sequence[float] = ()):
    """``E[g(a Z)]`` for a standard normal ``Z``; ``a`` may be an array.

    ``g`` must be vectorized. ``a = 0`` returns ``g(0)`` exactly.
    """
    return _functional(int(order)).expect(g, a, tuple(breakpoints))

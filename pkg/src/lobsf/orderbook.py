"""Order book shape functions and their Legendre-dual transaction costs.

A shape ``gamma`` is convex with ``gamma(0) = 0``; its second derivative is
the resting liquidity density around the mid-price. Executing a block of
size ``l`` against the book costs ``c(l) = sup_x (l x - gamma(x))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from .errors import NumericDomainError, ValidationError
from .stochastic import gaussian_expect

__all__ = [
    "ShapeSpec",
    "Flat",
    "HalfSpreadWall",
    "Tabulated",
    "CostFunction",
    "QuadraticCost",
    "ProportionalCost",
    "PiecewiseLinearCost",
    "legendre_transform",
    "conjugate_numeric",
    "biconjugate_check",
    "g_function",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _arr(x):
    return np.asarray(x, dtype=float)


def _out(x, val):
    return float(val) if np.ndim(x) == 0 else val


# ---------------------------------------------------------------------------
# cost functions
# ---------------------------------------------------------------------------


class CostFunction:
    """Convex, even cost ``c`` with ``c(0) = 0``.

    ``domain`` is the closed interval where ``c`` is finite. Kinks of ``c``
    are listed in ``breakpoints`` and are used to split quadratures.
    """

    domain: tuple[float, float] = (-math.inf, math.inf)
    breakpoints: tuple[float, ...] = ()
    piecewise_linear = False

    def __call__(self, l):
        raise NotImplementedError

    def d1(self, l):
        raise NotImplementedError

    def d2(self, l):
        raise NotImplementedError

    def rescale(self, n: float) -> "CostFunction":
        """Cost of the book rescaled to trade-clock scale ``n``: ``c(sqrt(n) l) / n``."""
        raise NotImplementedError

    @property
    def is_even(self) -> bool:
        return True

    def in_domain(self, l) -> np.ndarray:
        l = _arr(l)
        return (l >= self.domain[0]) & (l <= self.domain[1])

    def gaussian_mean(self, a):
        """``Phi_a(c) = E[c(a Z)]``; subclasses override with closed forms."""
        return gaussian_expect(self, a, breakpoints=self.breakpoints)


@dataclass(frozen=True)
class QuadraticCost(CostFunction):
    """``c(l) = l^2 / (2 m)``: the conjugate of a flat book of density ``m``."""

    m: float

    breakpoints = ()

    def __call__(self, l):
        l = _arr(l)
        return _out(l, 0.5 * l * l / self.m)

    def d1(self, l):
        l = _arr(l)
        return _out(l, l / self.m)

    def d2(self, l):
        l = _arr(l)
        return _out(l, np.full_like(l, 1.0 / self.m))

    def rescale(self, n):
        return self

    def gaussian_mean(self, a):
        a = _arr(a)
        return _out(a, 0.5 * a * a / self.m)


@dataclass(frozen=True)
class ProportionalCost(CostFunction):
    """``c(l) = s |l| / 2``: every order fills at the best quote."""

    s: float

    breakpoints = (0.0,)
    piecewise_linear = True

    def __call__(self, l):
        l = _arr(l)
        return _out(l, 0.5 * self.s * np.abs(l))

    def d1(self, l):
        l = _arr(l)
        return _out(l, 0.5 * self.s * np.sign(l))

    def d2(self, l):
        # weak derivative s * delta_0 has no density
        l = _arr(l)
        return _out(l, np.zeros_like(l))

    def rescale(self, n):
        return ProportionalCost(self.s / math.sqrt(n))

    def gaussian_mean(self, a):
        a = _arr(a)
        return _out(a, self.s * a / _SQRT_2PI)


class PiecewiseLinearCost(CostFunction):
    """Conjugate of a piecewise-linear shape through knots ``(x_i, gamma_i)``.

    On ``[slope_{i-1}, slope_i]`` the supremum is attained at knot ``x_i``,
    so ``c(l) = l x_i - gamma_i`` there and ``c'(l) = x_i``.
    """

    piecewise_linear = True

    def __init__(self, x, gamma, domain=(-math.inf, math.inf)):
        self.x = _arr(x)
        self.gamma = _arr(gamma)
        self.slopes = np.diff(self.gamma) / np.diff(self.x)
        self.domain = (float(domain[0]), float(domain[1]))
        self.breakpoints = tuple(float(s) for s in self.slopes)

    def __repr__(self):
        return f"PiecewiseLinearCost(knots={len(self.x)}, domain={self.domain})"

    def _piece(self, l):
        return np.searchsorted(self.slopes, l, side="left")

    def _check(self, l):
        if not np.all(self.in_domain(l)):
            bad = _arr(l)[~self.in_domain(l)].reshape(-1)[0]
            raise NumericDomainError(f"cost evaluated at {bad:.6g} outside domain {self.domain}")

    def __call__(self, l):
        l = _arr(l)
        self._check(l)
        i = self._piece(l)
        return _out(l, l * self.x[i] - self.gamma[i])

    def d1(self, l):
        l = _arr(l)
        self._check(l)
        if np.any(np.isin(l, self.slopes)):
            raise NumericDomainError("c' is undefined at a kink of a piecewise-linear cost")
        return _out(l, self.x[self._piece(l)])

    def d2(self, l):
        l = _arr(l)
        return _out(l, np.zeros_like(l))

    @property
    def is_even(self) -> bool:
        return (
            np.allclose(self.x, -self.x[::-1], rtol=0, atol=1e-12)
            and np.allclose(self.gamma, self.gamma[::-1], rtol=0, atol=1e-12)
            and self.domain[0] == -self.domain[1]
        )

    def rescale(self, n):
        r = math.sqrt(n)
        return PiecewiseLinearCost(self.x / r, self.gamma / n, (self.domain[0] / r, self.domain[1] / r))

    def gaussian_mean(self, a):
        a = _arr(a)
        if self.domain != (-math.inf, math.inf):
            # Gaussian mass always reaches the region where c is infinite
            return _out(a, np.where(a > 0, math.inf, 0.0))
        flat = a.reshape(-1)
        out = np.zeros(flat.shape)
        pos = flat > 0
        ap = flat[pos][:, None]
        edges = np.concatenate(([-np.inf], self.slopes, [np.inf]))
        u = edges[None, :] / ap
        cdf = ndtr(u)
        pdf = np.exp(-0.5 * np.where(np.isfinite(u), u, 0.0) ** 2) / _SQRT_2PI
        pdf = np.where(np.isfinite(u), pdf, 0.0)
        mass = np.diff(cdf, axis=1)
        first = pdf[:, :-1] - pdf[:, 1:]
        out[pos] = (-self.gamma[None, :] * mass + self.x[None, :] * ap * first).sum(axis=1)
        return _out(a, out.reshape(a.shape))


# ---------------------------------------------------------------------------
# shapes
# ---------------------------------------------------------------------------


class ShapeSpec:
    """Convex order book shape with ``gamma(0) = 0`` and ``gamma >= 0``."""

    def gamma(self, x):
        raise NotImplementedError

    def d1(self, x):
        raise NotImplementedError

    def d2(self, x):
        raise NotImplementedError

    def rescale(self, n: float) -> "ShapeSpec":
        """``gamma_n(x) = gamma(sqrt(n) x) / n``."""
        raise NotImplementedError

    def conjugate(self) -> CostFunction:
        raise NotImplementedError

    def test_points(self) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Flat(ShapeSpec):
    """Uniform depth ``m``: ``gamma(x) = m x^2 / 2``."""

    m: float

    def __post_init__(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValidationError(f"flat book density must be positive, got {self.m}")

    def gamma(self, x):
        x = _arr(x)
        return _out(x, 0.5 * self.m * x * x)

    def d1(self, x):
        x = _arr(x)
        return _out(x, self.m * x)

    def d2(self, x):
        x = _arr(x)
        return _out(x, np.full_like(x, self.m))

    def rescale(self, n):
        return self

    def conjugate(self):
        return QuadraticCost(self.m)

    def test_points(self):
        return np.linspace(-10.0, 10.0, 201)


@dataclass(frozen=True)
class HalfSpreadWall(ShapeSpec):
    """No liquidity inside the half-spread, infinite depth at ``±s/2``."""

    s: float

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValidationError(f"spread must be positive, got {self.s}")

    def _inside(self, x):
        return np.abs(x) <= 0.5 * self.s

    def gamma(self, x):
        x = _arr(x)
        return _out(x, np.where(self._inside(x), 0.0, math.inf))

    def d1(self, x):
        x = _arr(x)
        if not np.all(np.abs(x) < 0.5 * self.s):
            bad = x[~(np.abs(x) < 0.5 * self.s)].reshape(-1)[0]
            raise NumericDomainError(
                f"gamma' evaluated at {bad:.6g}, outside the finite domain |x| < {0.5 * self.s:.6g}"
            )
        return _out(x, np.zeros_like(x))

    def d2(self, x):
        return self.d1(x)

    def rescale(self, n):
        return HalfSpreadWall(self.s / math.sqrt(n))

    def conjugate(self):
        return ProportionalCost(self.s)

    def test_points(self):
        return np.linspace(-0.5 * self.s, 0.5 * self.s, 203)[1:-1]


class Tabulated(ShapeSpec):
    """Piecewise-linear convex shape through knots ``(x_i, gamma_i)``.

    ``extend="wall"`` puts infinite depth beyond the outer knots (the cost
    is then finite everywhere); ``extend="linear"`` continues ``gamma``
    with its outer slopes, i.e. the book holds finitely many shares and
    trades larger than the total depth have infinite cost.
    """

    def __init__(self, x, gamma, extend: str = "wall"):
        x = _arr(x)
        gamma = _arr(gamma)
        if x.ndim != 1 or x.shape != gamma.shape or len(x) < 2:
            raise ValidationError("tabulated shape needs two equal-length columns with >= 2 knots")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(gamma)):
            raise ValidationError("tabulated shape contains non-finite values")
        if np.any(np.diff(x) <= 0):
            k = int(np.argmax(np.diff(x) <= 0)) + 1
            raise ValidationError(f"knot x values must be strictly increasing (knot {k}, x={x[k]:.6g})")
        slopes = np.diff(gamma) / np.diff(x)
        bad = np.nonzero(np.diff(slopes) < -1e-12 * (1.0 + np.abs(slopes[1:])))[0]
        if len(bad):
            k = int(bad[0]) + 1
            raise ValidationError(f"shape is not convex at knot {k} (x={x[k]:.6g}, gamma={gamma[k]:.6g})")
        if np.any(gamma < 0):
            k = int(np.argmax(gamma < 0))
            raise ValidationError(f"gamma must be >= 0 (knot {k}, gamma={gamma[k]:.6g})")
        if not (x[0] <= 0.0 <= x[-1]) or abs(float(np.interp(0.0, x, gamma))) > 1e-12:
            raise ValidationError("gamma(0) must equal 0 with 0 inside the knot range")
        if extend not in ("wall", "linear"):
            raise ValidationError(f"extend must be 'wall' or 'linear', got {extend!r}")
        self.x, self.gamma_knots, self.extend = x, gamma, extend
        self.slopes = slopes

    def __repr__(self):
        return f"Tabulated(knots={len(self.x)}, extend={self.extend!r})"

    @classmethod
    def from_file(cls, path: str | Path, extend: str = "wall") -> "Tabulated":
        """Load whitespace- or comma-separated ``x gamma`` columns."""
        text = Path(path).read_text()
        delim = "," if "," in text else None
        data = np.loadtxt(path, delimiter=delim, ndmin=2, comments="#")
        if data.shape[1] != 2:
            raise ValidationError(f"{path}: expected 2 columns, found {data.shape[1]}")
        return cls(data[:, 0], data[:, 1], extend=extend)

    def gamma(self, x):
        x = _arr(x)
        inside = np.interp(x, self.x, self.gamma_knots)
        if self.extend == "wall":
            val = np.where((x >= self.x[0]) & (x <= self.x[-1]), inside, math.inf)
        else:
            left = self.gamma_knots[0] + self.slopes[0] * (x - self.x[0])
            right = self.gamma_knots[-1] + self.slopes[-1] * (x - self.x[-1])
            val = np.where(x < self.x[0], left, np.where(x > self.x[-1], right, inside))
        return _out(x, val)

    def d1(self, x):
        x = _arr(x)
        if np.any(np.isin(x, self.x[1:-1])):
            raise NumericDomainError("gamma' is undefined at an interior knot")
        if self.extend == "wall" and not np.all((x > self.x[0]) & (x < self.x[-1])):
            raise NumericDomainError("gamma' evaluated outside the finite domain of the shape")
        i = np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, len(self.slopes) - 1)
        return _out(x, self.slopes[i])

    def d2(self, x):
        x = _arr(x)
        return _out(x, np.zeros_like(x))

    def rescale(self, n):
        r = math.sqrt(n)
        return Tabulated(self.x / r, self.gamma_knots / n, extend=self.extend)

    def conjugate(self):
        domain = (-math.inf, math.inf)
        if self.extend == "linear":
            domain = (float(self.slopes[0]), float(self.slopes[-1]))
        return PiecewiseLinearCost(self.x, self.gamma_knots, domain)

    def test_points(self):
        return self.x.copy()


def legendre_transform(shape: ShapeSpec) -> CostFunction:
    """Transaction cost ``c(l) = sup_x (l x - gamma(x))`` of a book shape."""
    return shape.conjugate()


# ---------------------------------------------------------------------------
# duality self-test
# ---------------------------------------------------------------------------


def conjugate_numeric(fun, x, lo=-math.inf, hi=math.inf, breakpoints=(), piecewise_linear=False, radius=1e4):
    """``sup_l (l x - fun(l))`` computed by direct maximization.

    Piecewise-linear ``fun`` is handled by enumerating its kinks (the
    supremum of a concave piecewise-linear objective sits on one); smooth
    ``fun`` by bounded Brent search on ``[lo, hi]`` clipped to ``±radius``.
    """
    xs = np.atleast_1d(_arr(x))
    out = np.empty(xs.shape)
    if piecewise_linear:
        cand = np.array(sorted(set(breakpoints) | {b for b in (lo, hi) if math.isfinite(b)}))
        vals = np.asarray(fun(cand), dtype=float)
        out[:] = (xs[:, None] * cand[None, :] - vals[None, :]).max(axis=1)
    else:
        a, b = max(lo, -radius), min(hi, radius)
        for i, xi in enumerate(xs):
            res = minimize_scalar(lambda l: float(fun(l)) - l * xi, bounds=(a, b), method="bounded",
                                  options={"xatol": 1e-12})
            out[i] = -res.fun
    return float(out[0]) if np.ndim(x) == 0 else out


def biconjugate_check(shape: ShapeSpec, points=None) -> float:
    """Largest ``|gamma - c*|`` on test points, ``c*`` the numeric conjugate of ``c``."""
    cost = legendre_transform(shape)
    pts = shape.test_points() if points is None else _arr(points)
    back = conjugate_numeric(cost, pts, *cost.domain, breakpoints=cost.breakpoints,
                             piecewise_linear=cost.piecewise_linear)
    return float(np.max(np.abs(shape.gamma(pts) - back)))


def g_function(cost: CostFunction, l, quadrature: bool = False):
    """``g(l) = sign(l) Phi_{|l|}(c)`` with ``sign(0) = 0``.

    ``quadrature=True`` bypasses closed forms and integrates numerically.
    """
    l = _arr(l)
    a = np.abs(l)
    phi = gaussian_expect(cost, a, breakpoints=cost.breakpoints) if quadrature else cost.gaussian_mean(a)
    return _out(l, np.sign(l) * phi)

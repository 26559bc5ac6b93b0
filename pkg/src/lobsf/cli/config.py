"""Scenario files: TOML text validated into typed sections.

Every table rejects unknown keys. The ``experiment`` key selects which
sections are required; see ``REQUIRED``.
"""

from __future__ import annotations

import ast
import math
import sys
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import LobsfError, ValidationError
from ..hedging import (
    PdeProblem,
    call_payoff,
    call_spread_payoff,
    default_domain,
    frictionless_spread,
    linear_payoff,
    put_payoff,
)
from ..impact import ImpactBookModel
from ..mm import AlphaModel, MMModel
from ..orderbook import Flat, HalfSpreadWall, ProportionalCost, QuadraticCost, Tabulated
from ..stochastic import GBM, OU, Custom, MartingaleConstVol

EXPERIMENTS = (
    "convergence",
    "impact-limit",
    "manipulation",
    "hedge",
    "replicate",
    "market-make",
    "verify-jacod",
)

REQUIRED = {
    "convergence": ("convergence", "book", "mc"),
    "impact-limit": ("impact", "book", "mc"),
    "manipulation": ("manipulation", "book"),
    "hedge": ("hedge",),
    "replicate": ("hedge", "replicate", "mc"),
    "market-make": ("mm", "alpha", "mc"),
    "verify-jacod": ("jacod", "mc"),
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BookConfig(_Section):
    kind: Literal["flat", "half_spread_wall", "tabulated", "quadratic_cost", "proportional_cost"] = "flat"
    m: float = Field(1.0, gt=0)
    s: float = Field(1.0, ge=0)
    x: Optional[list[float]] = None
    gamma: Optional[list[float]] = None
    file: Optional[str] = None
    extend: Literal["wall", "linear"] = "wall"

    def shape(self):
        if self.kind == "flat":
            return Flat(self.m)
        if self.kind == "half_spread_wall":
            return HalfSpreadWall(self.s)
        if self.kind == "tabulated":
            if self.file is not None:
                return Tabulated.from_file(self.file, extend=self.extend)
            if self.x is None or self.gamma is None:
                raise ValidationError("tabulated book needs x and gamma (or file)")
            return Tabulated(self.x, self.gamma, extend=self.extend)
        raise ValidationError(f"book kind {self.kind!r} is a cost function, not a shape")

    def cost(self):
        if self.kind == "quadratic_cost":
            return QuadraticCost(self.m)
        if self.kind == "proportional_cost":
            return ProportionalCost(self.s)
        from ..orderbook import legendre_transform

        return legendre_transform(self.shape())


class ProcessConfig(_Section):
    kind: Literal["brownian", "gbm", "ou"] = "brownian"
    x0: float = 0.0
    sigma: float = Field(1.0, ge=0)
    mu: float = 0.0
    kappa: float = Field(1.0, gt=0)
    mean_level: float = 0.0

    def spec(self):
        if self.kind == "brownian":
            if self.mu == 0:
                return MartingaleConstVol(self.x0, self.sigma)
            mu, sig = self.mu, self.sigma
            return Custom(self.x0, lambda t, x: mu + 0 * x, lambda t, x: sig + 0 * x)
        if self.kind == "gbm":
            return GBM(self.x0, self.mu, self.sigma)
        return OU(self.x0, self.kappa, self.mean_level, self.sigma)


class ProcessPair(_Section):
    p: ProcessConfig = ProcessConfig()
    L: ProcessConfig = ProcessConfig()


class MCConfig(_Section):
    paths: int = Field(1000, ge=0)
    chunk: Optional[int] = Field(None, ge=1)


class ConvergenceConfig(_Section):
    order: Literal["limit", "market"] = "limit"
    corr: float = Field(-1.0, ge=-1, le=1)
    scales: list[int] = [2500, 10000, 40000]
    horizon: float = Field(1.0, gt=0)
    ref_factor: int = Field(4, ge=1)


class ImpactConfig(_Section):
    recovery: float = Field(0.5, gt=0)
    b: float = 0.0
    l: float = 1.0
    steps: int = Field(10000, ge=1)
    horizon: float = Field(1.0, gt=0)


class ManipulationConfig(_Section):
    recovery: Union[float, list[float]] = 0.5
    l: float = 1.0
    horizon: float = Field(1.0, gt=0)
    steps: int = Field(2000, ge=1)
    p0: float = 100.0
    paths: int = Field(0, ge=0)


class PayoffConfig(_Section):
    kind: Literal["call", "put", "linear", "call_spread", "constant"] = "call"
    strike: float = 100.0
    k1: float = 90.0
    k2: float = 110.0
    a: float = 1.0
    b: float = 0.0
    sign: Literal[1, -1] = 1

    def build(self):
        if self.kind == "call":
            f = call_payoff(self.strike)
        elif self.kind == "put":
            f = put_payoff(self.strike)
        elif self.kind == "linear":
            f = linear_payoff(self.a, self.b)
        elif self.kind == "call_spread":
            if not self.k1 < self.k2:
                raise ValidationError("call spread needs k1 < k2")
            f = call_spread_payoff(self.k1, self.k2)
        else:
            b = self.b
            f = lambda p: np.full(np.shape(p), b, dtype=float)
        sign = self.sign
        return f if sign == 1 else (lambda p: -f(p))


class HedgeConfig(_Section):
    payoff: PayoffConfig = PayoffConfig()
    maturity: float = Field(1.0, gt=0)
    p0: float = 100.0
    sigma: float = Field(0.2, gt=0)
    vol_model: Literal["multiplicative", "additive"] = "multiplicative"
    mu: float = 0.0
    spread: Union[Literal["frictionless", "book"], float] = "frictionless"
    n_p: int = Field(400, ge=3)
    n_t: int = Field(400, ge=3)
    width: float = Field(5.0, gt=0)
    p_min: Optional[float] = None
    p_max: Optional[float] = None
    boundary: Literal["linear", "payoff"] = "linear"
    substeps: Union[Literal["auto"], int] = "auto"
    allow_ill_posed: bool = False

    def problem(self, book: BookConfig | None = None) -> PdeProblem:
        mult = self.vol_model == "multiplicative"
        sig, mu = self.sigma, self.mu
        if mult:
            vol = lambda p: sig * np.asarray(p, dtype=float)
            drift = lambda p: mu * np.asarray(p, dtype=float)
        else:
            vol = lambda p: np.full(np.shape(p), sig, dtype=float)
            drift = lambda p: np.full(np.shape(p), mu, dtype=float)
        lo, hi = default_domain(self.p0, sig, self.maturity, mult, self.width)
        lo = lo if self.p_min is None else self.p_min
        hi = hi if self.p_max is None else self.p_max
        kw = {}
        if self.spread == "frictionless":
            kw["spread"] = frictionless_spread(vol)
        elif self.spread == "book":
            if book is None:
                raise ValidationError("spread = 'book' needs a [book] section")
            kw["cost"] = book.cost()
        else:
            s = float(self.spread)
            if s < 0:
                raise ValidationError("spread must be >= 0")
            kw["spread"] = lambda p: np.full(np.shape(p), s, dtype=float)
        return PdeProblem(
            payoff=self.payoff.build(), maturity=self.maturity, sigma=vol, p_min=lo, p_max=hi,
            n_p=self.n_p, n_t=self.n_t, mu=drift, boundary=self.boundary, substeps=self.substeps,
            allow_ill_posed=self.allow_ill_posed, p0=self.p0, **kw,
        )


class ReplicateConfig(_Section):
    steps: list[int] = [2500, 10000]
    censor: Literal["drop", "clamp"] = "drop"


class MMConfig(_Section):
    model: Literal["explicit", "custom"] = "explicit"
    f: Optional[str] = None
    rho: Optional[str] = None
    drop_sqrt_2pi: bool = False
    a_grid: list[float] = [0.25, 0.5, 1.0, 2.0, 4.0]

    def build(self) -> MMModel:
        if self.model == "explicit":
            if self.f is not None or self.rho is not None:
                raise ValidationError("f and rho are only used by the custom model")
            return MMModel.explicit(self.drop_sqrt_2pi)
        if self.f is None or self.rho is None:
            raise ValidationError("custom model needs expressions for f and rho")
        return MMModel(expression(self.f, "x"), expression(self.rho, "x"), "custom", self.drop_sqrt_2pi)


class AlphaConfig(_Section):
    kind: Literal["martingale", "black_scholes", "ou"] = "martingale"
    maturity: float = Field(1.0, gt=0)
    sigma: float = Field(0.3, gt=0)
    p0: float = 100.0
    mu: float = 0.0
    kappa: float = 1.0
    steps: int = Field(500, ge=1)

    def build(self) -> AlphaModel:
        return AlphaModel(self.kind, self.maturity, self.sigma, self.p0, self.mu, self.kappa)


class JacodConfig(_Section):
    F: str = "y**3"
    dF: str = "3*y**2"
    b: float = 1.0
    sigma: float = Field(1.0, gt=0)
    steps: int = Field(10000, ge=1)
    horizon: float = Field(1.0, gt=0)
    growth: tuple[float, float] = (1e3, 8.0)


class Scenario(_Section):
    name: str
    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    out: Optional[str] = None
    book: Optional[BookConfig] = None
    process: Optional[ProcessPair] = None
    mc: Optional[MCConfig] = None
    convergence: Optional[ConvergenceConfig] = None
    impact: Optional[ImpactConfig] = None
    manipulation: Optional[ManipulationConfig] = None
    hedge: Optional[HedgeConfig] = None
    replicate: Optional[ReplicateConfig] = None
    mm: Optional[MMConfig] = None
    alpha: Optional[AlphaConfig] = None
    jacod: Optional[JacodConfig] = None


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

_FUNCS = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh,
    "sin": np.sin, "cos": np.cos, "minimum": np.minimum, "maximum": np.maximum,
    "sign": np.sign, "arctan": np.arctan,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod, ast.FloorDiv,
)


def expression(text: str, var: str):
    """Compile a numeric expression in one variable, e.g. ``"1/(1+x)**2"``."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValidationError(f"expression {text!r}: {type(node).__name__} not allowed")
        if isinstance(node, ast.Name) and node.id != var and node.id not in _FUNCS and node.id not in _CONSTS:
            raise ValidationError(f"expression {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ValidationError(f"expression {text!r}: only {sorted(_FUNCS)} may be called")
    code = compile(tree, "<expr>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}

    def fn(v):
        v = np.asarray(v, dtype=float)
        return np.asarray(eval(code, env, {var: v}), dtype=float) * np.ones_like(v)

    fn.__name__ = text
    return fn


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def parse_value(text: str):
    """A TOML literal (``3``, ``[1, 2]``, ``true``, ``"x"``) or, failing that, a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"override {item!r} is not key=value")
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {item!r}: {p!r} is not a table")
        node[parts[-1]] = parse_value(value.strip())
    return data


def read_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _format_pydantic(exc: PydanticError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            out.append(f"unknown key {loc}")
        elif err["type"] == "missing":
            out.append(f"missing required field {loc}")
        else:
            out.append(f"{loc}: {err['msg']}")
    return out


def semantic_violations(sc: Scenario) -> list[str]:
    """Checks that need the module objects, collected rather than raised."""
    out = [f"missing section [{s}] for experiment {sc.experiment}"
           for s in REQUIRED[sc.experiment] if getattr(sc, s) is None]
    if out:
        return out

    def attempt(label, fn):
        try:
            return fn()
        except (LobsfError, ValueError) as exc:
            out.append(f"{label}: {exc}")
            return None

    if sc.book is not None:
        if sc.book.kind in ("quadratic_cost", "proportional_cost"):
            attempt("book", sc.book.cost)
        else:
            attempt("book", sc.book.shape)
    exp = sc.experiment
    if exp == "convergence":
        c = sc.convergence
        if c.scales != sorted(set(c.scales)) or min(c.scales) < 1:
            out.append("convergence.scales must be positive and strictly increasing")
        if sc.mc.paths < 2:
            out.append("mc.paths must be >= 2")
    elif exp == "impact-limit":
        if sc.book.kind in ("quadratic_cost", "proportional_cost"):
            out.append("impact-limit needs an order book shape")
        if sc.mc.paths < 2:
            out.append("mc.paths must be >= 2")
    elif exp == "manipulation":
        if sc.book.kind != "flat":
            out.append("manipulation needs a flat book")
        rec = sc.manipulation.recovery
        for lam in rec if isinstance(rec, list) else [rec]:
            if not lam > 0:
                out.append(f"manipulation.recovery must be > 0, got {lam}")
    elif exp in ("hedge", "replicate"):
        prob = attempt("hedge", lambda: sc.hedge.problem(sc.book))
        if prob is not None and prob.substeps != "auto":
            dtau = prob.maturity / prob.n_t / int(prob.substeps)
            admissible = prob.admissible_dtau()
            if dtau > admissible:
                out.append(
                    f"hedge: CFL violated, dtau = {dtau:.6g} > admissible dtau = {admissible:.6g} "
                    f"(n_t >= {math.ceil(prob.maturity / (admissible * int(prob.substeps)))} "
                    f"or substeps = 'auto')"
                )
        if exp == "replicate" and any(n < 1 for n in sc.replicate.steps):
            out.append("replicate.steps must be >= 1")
    elif exp == "market-make":
        model = attempt("mm", sc.mm.build)
        if model is not None:
            out.extend(f"mm: {v}" for v in model.violations())
        attempt("alpha", sc.alpha.build)
        if sc.mc.paths < 2:
            out.append("mc.paths must be >= 2")
    elif exp == "verify-jacod":
        from ..impact import LimitLawSpec

        j = sc.jacod
        F = attempt("jacod.F", lambda: expression(j.F, "y"))
        dF = attempt("jacod.dF", lambda: expression(j.dF, "y"))
        if F is not None and dF is not None:
            attempt("jacod", lambda: LimitLawSpec(F, dF, j.b, j.sigma, j.steps, sc.mc.paths, sc.seed,
                                                  j.horizon, tuple(j.growth), j.F).validate())
    return out


def load_scenario(path: str | Path, overrides: list[str] = (), seed: int | None = None,
                  out: str | None = None, threads: int | None = None) -> tuple[Scenario | None, list[str]]:
    """Parse and validate; returns the scenario (or None) and all violations."""
    try:
        data = apply_overrides(read_toml(path), list(overrides))
    except ValidationError as exc:
        return None, [str(exc)]
    for key, val in (("seed", seed), ("out", out), ("threads", threads)):
        if val is not None:
            data[key] = val
    try:
        sc = Scenario.model_validate(data)
    except PydanticError as exc:
        return None, _format_pydantic(exc)
    return sc, semantic_violations(sc)


def book_model(sc: Scenario, recovery: float) -> ImpactBookModel:
    return ImpactBookModel(sc.book.shape(), recovery)

"""Self-financing accounting, impact limits, option hedging and market making for limit order books."""

from __future__ import annotations

from . import errors, hedging, impact, ledger, mm, orderbook, stochastic
from .errors import (
    BracketError,
    ConfigurationError,
    ConsistencyError,
    IllPosedError,
    LobsfError,
    NumericDomainError,
    ShapeError,
    UnsupportedModelError,
    ValidationError,
)
from .orderbook import Flat, HalfSpreadWall, ProportionalCost, QuadraticCost, Tabulated, legendre_transform
from .stochastic import GBM, OU, MartingaleConstVol, SamplePath, TimeGrid, gaussian_expect

__version__ = "0.1.0"

__all__ = [
    "errors", "hedging", "impact", "ledger", "mm", "orderbook", "stochastic",
    "BracketError", "ConfigurationError", "ConsistencyError", "IllPosedError", "LobsfError",
    "NumericDomainError", "ShapeError", "UnsupportedModelError", "ValidationError",
    "Flat", "HalfSpreadWall", "ProportionalCost", "QuadraticCost", "Tabulated", "legendre_transform",
    "GBM", "OU", "MartingaleConstVol", "SamplePath", "TimeGrid", "gaussian_expect",
]

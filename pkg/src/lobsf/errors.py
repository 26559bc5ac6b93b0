"""Exception hierarchy shared by all modules."""


class LobsfError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(LobsfError, ValueError):
    """Input object violates a documented invariant."""


class ShapeError(LobsfError, ValueError):
    """Arrays or grids have incompatible lengths."""


class NumericDomainError(LobsfError, ArithmeticError):
    """A function was evaluated outside the set where it is finite."""


class ConsistencyError(LobsfError, ValueError):
    """Order type and price/inventory covariation sign disagree."""


class IllPosedError(LobsfError, ArithmeticError):
    """A PDE left its parabolic regime."""


class ConfigurationError(ValidationError):
    """Solver or scenario settings are inadmissible (e.g. CFL bound)."""


class BracketError(LobsfError, RuntimeError):
    """A maximization bracket could not be established."""


class UnsupportedModelError(LobsfError, NotImplementedError):
    """The requested model variant is not covered by a closed form."""

"""Exception hierarchy.

Each class carries the process exit code the command line maps it to, so
library callers can catch by category while the CLI stays a thin shell.
"""

from __future__ import annotations


class TateRecError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(TateRecError, ValueError):
    """Invalid configuration or violated input precondition."""

    exit_code = 2


class GeometryError(ConfigError):
    """Grid, domain or surface layout that the numerics cannot accept."""


class NumericalError(TateRecError, ArithmeticError):
    """A numerical contract could not be met."""

    exit_code = 3


class CFLError(NumericalError):
    """Time step exceeds the explicit stability limit."""


class NonFiniteError(NumericalError):
    """A non-finite value appeared during time stepping."""

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


class ConvergenceError(NumericalError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, achieved: float | None = None) -> None:
        super().__init__(message)
        self.achieved = achieved


class FormatError(TateRecError, OSError):
    """Malformed or corrupted file payload."""

    exit_code = 4

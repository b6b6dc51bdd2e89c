"""Exception types shared across the package."""

from __future__ import annotations


class RacelineError(Exception):
    """Base class for all package errors."""


class DomainError(RacelineError, ValueError):
    """An argument lies outside the domain of an operation."""


class SingularityError(RacelineError, ArithmeticError):
    """Curve tangent vanishes, so curvature/kinematics are undefined."""

    def __init__(self, message: str, u: float) -> None:
        super().__init__(f"{message} (u={u:.17g})")
        self.u = u


class ConditioningError(RacelineError, ValueError):
    """Closure system is numerically ill-conditioned."""


class OutOfBoundsError(RacelineError, ValueError):
    """A position falls outside the constraint map extent."""

    def __init__(self, message: str, u: float | None = None) -> None:
        if u is not None:
            message = f"{message} (u={u:.17g})"
        super().__init__(message)
        self.u = u


class NoTransitionError(RacelineError, ValueError):
    """The acceleration sign sequence never changes over the lap."""


class ConfigError(RacelineError, ValueError):
    """Invalid experiment or component configuration."""

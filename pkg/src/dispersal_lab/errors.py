"""Exception hierarchy shared by the solvers and the CLI."""

from __future__ import annotations


class DispersalLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DispersalLabError):
    """Unreadable or ill-formed configuration (CLI exit code 3)."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ValidationError(DispersalLabError):
    """Configuration parsed but violates the model assumptions (exit code 2)."""

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid configuration: {text}")


class SolverError(DispersalLabError):
    """A numerical solver failed to converge (exit code 4)."""

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (last residual {residual:.3e})"
        super().__init__(message)


class PositivityError(SolverError):
    """A time step produced a non-positive density value."""


class DegenerateDensityError(DispersalLabError, ValueError):
    """A density with zero total mass was passed where mass is required."""


class PostconditionError(DispersalLabError):
    """A computed result failed a stated postcondition (exit code 5)."""


class ESSViolation(PostconditionError):
    """The Hamiltonian curve does not have zero minimum."""

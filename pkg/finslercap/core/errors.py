"""Exception hierarchy shared by all finslercap modules.

Every error carries the structured context its handler needs; the CLI maps
the classes onto exit codes (see `finslercap.cli.commands.exit_code_for`).
"""

from __future__ import annotations

from typing import Sequence


class FinslerCapError(Exception):
    """Base class for all finslercap errors."""


class InvalidArgumentError(FinslerCapError, ValueError):
    """Raised for non-finite input, out-of-range indices or malformed matrices."""


class NormDomainError(FinslerCapError, ValueError):
    """Raised when a norm derivative is requested at the origin."""

    def __init__(self, operation: str):
        self.operation = operation
        super().__init__(f"{operation} is not defined at xi = 0 (norm not differentiable at the origin)")


class ConvergenceFailure(FinslerCapError):
    """Raised when an iterative solver stops without meeting its tolerance."""

    def __init__(
        self,
        message: str,
        residual_history: Sequence[float] = (),
        best_bracket: tuple[float, float] | None = None,
    ):
        self.residual_history = [float(r) for r in residual_history]
        self.best_bracket = best_bracket
        super().__init__(message)


class ConstructionError(FinslerCapError, ValueError):
    """Raised when a body or domain cannot be built from the given data."""


class CurvatureSingularityError(FinslerCapError):
    """Raised when the tangential Hessian of a support function is singular."""

    def __init__(self, theta: Sequence[float], determinant: float):
        self.theta = [float(t) for t in theta]
        self.determinant = float(determinant)
        super().__init__(
            f"Tangential Hessian is singular at theta={self.theta} (det={self.determinant:.3e})"
        )


class UnsupportedDimensionError(FinslerCapError, ValueError):
    """Raised for dimension/family combinations the quadrature cannot handle."""

    def __init__(self, dimension: int, reason: str):
        self.dimension = dimension
        super().__init__(f"Dimension {dimension} unsupported: {reason}")


class SolverInconsistencyError(FinslerCapError):
    """Raised when truncated exterior solves violate the comparison principle."""

    def __init__(self, max_violation: float, radii: tuple[float, float]):
        self.max_violation = float(max_violation)
        self.radii = radii
        super().__init__(
            f"Truncated solutions not monotone in R_out between {radii[0]} and {radii[1]}: "
            f"max violation {self.max_violation:.3e}"
        )


class ConfigError(FinslerCapError, ValueError):
    """Raised for scenario files that fail validation or reference resolution."""


class AcceptanceFailure(FinslerCapError):
    """Raised when one or more acceptance criteria fail."""

    def __init__(self, failed_criteria: Sequence[int]):
        self.failed_criteria = list(failed_criteria)
        super().__init__(f"Acceptance criteria failed: {self.failed_criteria}")

"""Custom exception types for the APW-DG eigensolver.

All exceptions follow the error message standard from CODING_STANDARDS.md:
- What failed (specific operation or component)
- Where it failed (module, site index, config key)
- Why it failed (the specific condition)
- How to fix it (actionable guidance)

Every error belongs to one of three families, and each family maps onto a
CLI exit code:
- configuration errors (exit 2)
- problem validation errors (exit 3)
- numerical errors (exit 4)
"""

from __future__ import annotations

from typing import Any


class ApwDgError(Exception):
    """Base exception for all APW-DG errors."""

    exit_code: int = 1


# ---------------------------------------------------------------------------
# Configuration (exit 2)
# ---------------------------------------------------------------------------


class ConfigLoadError(ApwDgError):
    """Raised when a config file cannot be loaded (file not found, YAML parse error)."""

    exit_code = 2


class ConfigValidationError(ApwDgError):
    """Raised when a config fails Pydantic validation or an override is malformed.

    Includes specific field errors with actionable messages.
    """

    exit_code = 2


# ---------------------------------------------------------------------------
# Problem validation (exit 3)
# ---------------------------------------------------------------------------


class ProblemValidationError(ApwDgError):
    """Raised when a well-formed config describes an invalid problem."""

    exit_code = 3


class OverlappingSpheres(ProblemValidationError):
    """Two atomic spheres intersect.

    Attributes:
        first: Index of the first site
        second: Index of the second site
    """

    def __init__(self, message: str, first: int, second: int):
        super().__init__(message)
        self.first = first
        self.second = second


class SphereOutsideCell(ProblemValidationError):
    """An atomic sphere is not strictly inside the unit cell.

    Attributes:
        site: Index of the offending site
    """

    def __init__(self, message: str, site: int):
        super().__init__(message)
        self.site = site


class InvalidIndex(ProblemValidationError):
    """An angular index pair violates |m| <= l (or l < 0)."""


class OutOfRange(ProblemValidationError):
    """A radial argument or basis index lies outside its admissible range."""


class AtSingularity(ProblemValidationError):
    """Pointwise potential evaluation was requested at a nucleus.

    Attributes:
        site: Index of the nucleus hit
    """

    def __init__(self, message: str, site: int):
        super().__init__(message)
        self.site = site


class GridTooCoarse(ProblemValidationError):
    """The real-space density grid cannot resolve the requested Fourier modes."""


class ZeroVector(ProblemValidationError):
    """A Rayleigh quotient was requested for the zero vector."""


# ---------------------------------------------------------------------------
# Numerical failures (exit 4)
# ---------------------------------------------------------------------------


class NumericalError(ApwDgError):
    """Raised when a numerical kernel fails on otherwise valid input."""

    exit_code = 4


class QuadratureUnderResolved(NumericalError):
    """The angular quadrature fails its spherical-harmonic orthonormality self-test."""


class MassNotPositiveDefinite(NumericalError):
    """The overlap matrix M is not (numerically) positive definite.

    Attributes:
        smallest_pivot: Smallest Cholesky pivot or eigenvalue of M that was found
        condition_estimate: Estimated 2-norm condition number (inf if singular)
    """

    def __init__(
        self,
        message: str,
        smallest_pivot: float | None = None,
        condition_estimate: float | None = None,
    ):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot
        self.condition_estimate = condition_estimate


class ConvergenceFailure(NumericalError):
    """The dense eigensolver did not converge or produced inaccurate pairs."""


class NotConverged(NumericalError):
    """The SCF loop exhausted max_iters without meeting its tolerance.

    Attributes:
        history: Per-iteration records collected before giving up
    """

    def __init__(self, message: str, history: list[Any] | None = None):
        super().__init__(message)
        self.history = history or []


class RankDeficientTraceSpace(NumericalError):
    """The surface trace space collapsed to dimension zero after regularization."""


class IndexMismatch(NumericalError):
    """Tracked eigenpairs cannot be matched between a sweep point and the reference.

    Attributes:
        requested: Reference indices that were requested
        available: Number of eigenpairs available at the sweep point
    """

    def __init__(self, message: str, requested: list[int], available: int):
        super().__init__(message)
        self.requested = requested
        self.available = available


# ---------------------------------------------------------------------------
# Warnings
# ---------------------------------------------------------------------------


class TruncationWarning(UserWarning):
    """A truncated series has a tail above its monitoring threshold."""

"""Exception hierarchy.

Validation problems derive from :class:`ValueError`; numerical failures derive
from :class:`NumericalError` and carry a JSON-serialisable ``payload``.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Bad input. ``path`` names the offending field (e.g. ``parameters.m``)."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalError(RuntimeError):
    """A solver or quadrature routine did not meet its tolerance."""

    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = {"error": type(self).__name__, "message": message, **payload}


class QuadratureError(NumericalError):
    pass


class NewtonError(NumericalError):
    """Newton iteration failed.

    ``line_search_exhausted`` distinguishes a stalled backtracking search from
    plain non-convergence within the iteration budget.
    """

    def __init__(self, message: str, residual_history=(), line_search_exhausted=False, **payload):
        self.residual_history = [float(x) for x in residual_history]
        self.line_search_exhausted = bool(line_search_exhausted)
        super().__init__(
            message,
            residual_history=self.residual_history,
            line_search_exhausted=self.line_search_exhausted,
            **payload,
        )


class OrderingViolation(NumericalError):
    """A comparison-principle consequence failed beyond its slack (a scheme bug)."""

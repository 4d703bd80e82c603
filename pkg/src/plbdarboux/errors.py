"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`DarbouxError`,
so callers (the CLI in particular) can separate numerical/contract failures
from programming errors.
"""

from __future__ import annotations


class DarbouxError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(DarbouxError, ValueError):
    pass


class NonSPDGram(DarbouxError, ValueError):
    pass


class CompositionViolation(DarbouxError, ValueError):
    pass


class DiagramViolation(DarbouxError):
    """A map family does not commute with the connecting maps."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class SingularForm(DarbouxError):
    """A bilinear form has (numerically) nontrivial kernel."""

    def __init__(self, message: str, min_singular_value: float | None = None):
        super().__init__(message)
        self.min_singular_value = min_singular_value


class CompatibilityViolation(DarbouxError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DomainError(DarbouxError, ValueError):
    pass


class NoConvergence(DarbouxError):
    def __init__(self, message: str, contraction: float | None = None, changes=None):
        super().__init__(message)
        self.contraction = contraction
        self.changes = list(changes) if changes is not None else []


class EvaluationFailure(DarbouxError):
    pass


class BoundViolation(DarbouxError):
    def __init__(self, message: str, observed: float | None = None, bound: float | None = None):
        super().__init__(message)
        self.observed = observed
        self.bound = bound


class ConfigError(DarbouxError):
    """Scenario document failed validation; ``path`` is a JSON pointer."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path or "/"


class ParseError(DarbouxError):
    pass


class IoError(DarbouxError, OSError):
    pass

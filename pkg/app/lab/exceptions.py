"""
Exception hierarchy for the nonlocal lab.
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for every error raised by the lab."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, "details": self.details}


class ParameterError(LabError):
    """A parameter lies outside its admissible range."""


class DivergenceError(LabError):
    """A tail integral does not converge."""


class PreconditionError(LabError):
    """An operation was applied outside its declared precondition."""


class CFLViolationError(PreconditionError):
    """An explicit step exceeds the monotonicity bound."""


class InsufficientDataError(LabError):
    """Too few usable scales or samples for a fit."""


class HypothesisViolation(LabError):
    """An experiment hypothesis audit failed in strict mode."""


class ConfigError(LabError):
    """An experiment config cannot be parsed or validated."""

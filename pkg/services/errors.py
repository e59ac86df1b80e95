"""
Lab Errors
Version: 1.0

Exception hierarchy shared by every service.
NO DEPENDENCIES on other services.
"""

from typing import Optional


class LabError(Exception):
    """Base class for all disentlab errors."""
    pass


class ContractViolationError(LabError, ValueError):
    """Raised when an operation's precondition (usually a shape) is violated."""
    pass


class ConfigError(LabError, ValueError):
    """Raised for invalid or inconsistent configuration values."""
    pass


class GridTooLargeError(ConfigError):
    """Raised when exhaustive enumeration of a factor grid is refused."""
    pass


class FormatError(LabError):
    """Raised when a dataset or checkpoint file cannot be decoded."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DiagnosticError(LabError, RuntimeError):
    """Raised when a computation produces non-finite values or degenerates."""
    pass


class NonFiniteLossError(DiagnosticError):
    """Raised by training when the loss stops being finite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        message = f"non-finite loss at step {step}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)

"""Exception hierarchy shared by the solver modules and the CLI.

Every error carries a short ``error_type`` tag next to its message so the
CLI can report failures in one structured line and map them to exit codes.
"""
from __future__ import annotations


class FracSourceError(Exception):
    """Base class for controlled failures of a fracsource operation."""

    exit_code = 1

    def __init__(self, message: str, error_type: str = "fracsource_error"):
        self.message = message
        self.error_type = error_type
        super().__init__(f"[{self.error_type}] {self.message}")


class ConfigError(FracSourceError, ValueError):
    """Invalid configuration, inconsistent artifacts or violated preconditions."""

    exit_code = 2

    def __init__(self, message: str, error_type: str = "config_error"):
        super().__init__(message, error_type)


class NumericalError(FracSourceError, ArithmeticError):
    """A linear solve, factorization or iteration broke down."""

    exit_code = 3

    def __init__(self, message: str, error_type: str = "numerical_failure", residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message, error_type)


class VerificationError(FracSourceError):
    """One or more theoretical bound checks did not hold."""

    exit_code = 4

    def __init__(self, message: str, error_type: str = "verification_failure"):
        super().__init__(message, error_type)


class RealizationFailed(NumericalError):
    """A realization batch failed; the ensemble is aborted."""

    def __init__(self, indices, cause: BaseException):
        self.indices = list(indices)
        self.cause = cause
        first, last = (self.indices[0], self.indices[-1]) if self.indices else (-1, -1)
        super().__init__(
            f"realizations {first}..{last} failed: {cause}",
            error_type="realization_failed",
            residual=getattr(cause, "residual", None),
        )

"""Error hierarchy for dglego.

Every error carries the CLI exit code it maps to in ``exit_code``:
2 configuration, 3 data, 4 numerical failure.
"""
from typing import Any, Optional


class DglegoError(Exception):
    """Base class for all errors raised by dglego."""

    exit_code = 4


class ConfigError(DglegoError):
    """Invalid configuration file, unknown key or malformed override."""

    exit_code = 2


class DataError(DglegoError):
    """Dataset could not be read or prepared."""

    exit_code = 3


class DataFormatError(DataError):
    """A binary dataset stream is malformed."""


class InsufficientDataError(DataError):
    """Not enough samples to build the requested split."""


class NumericalError(DglegoError):
    """A numerical procedure failed."""

    exit_code = 4


class FactorizationError(NumericalError):
    """Cholesky factorization failed even after jitter escalation."""


class SingularCovarianceError(NumericalError):
    """The activation covariance H^T H is singular."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss or gradient.

    Args:
        message: Diagnostic message
        record: The partial run record at the time of divergence
    """

    def __init__(self, message: str, record: Optional[Any] = None):
        super().__init__(message)
        self.record = record


class ShapeError(DglegoError, ValueError):
    """Dimension mismatch or non-finite numeric input."""

    exit_code = 3


class LabelError(DglegoError, ValueError):
    """Labels are incompatible with the requested operation."""

    exit_code = 3


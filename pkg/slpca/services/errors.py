"""Exception hierarchy shared by every service."""

from typing import Any, Optional


class SlpcaError(Exception):
    """Base exception for slpca errors."""
    pass


class DataValidationError(SlpcaError, ValueError):
    """Raised when input data or a configuration violates its contract."""
    pass


class DimensionMismatchError(DataValidationError):
    """Raised when a model and a data matrix disagree on shape."""
    pass


class MatrixParseError(DataValidationError):
    """Raised when a CSV cell cannot be read; row and col are 1-based."""

    def __init__(self, message: str, row: Optional[int] = None, col: Optional[int] = None):
        super().__init__(message)
        self.row = row
        self.col = col


class DegenerateFactorError(SlpcaError):
    """Raised when a factor update cannot be solved even with ridge stabilization."""
    pass


class SelectionAbortedError(SlpcaError):
    """Raised when a fit fails during a grid search; carries the partial report."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class BootstrapFailureError(SlpcaError):
    """Raised when too few bootstrap refits succeed."""

    def __init__(self, message: str, n_success: int = 0, n_failed: int = 0):
        super().__init__(message)
        self.n_success = n_success
        self.n_failed = n_failed


class ExperimentAbortedError(SlpcaError):
    """Raised when a simulation step that cannot skip replicates fails."""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial

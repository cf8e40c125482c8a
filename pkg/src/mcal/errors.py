"""Exception types shared across the package."""


class McalError(Exception):
    """Base class for all package errors."""


class DataError(McalError):
    """Invalid input data: missing columns, non-finite values, bad treatment coding."""


class SeparationError(McalError):
    """Linear predictors too large for the exponential calibration loss,
    indicating (quasi-)separation of a treatment group."""


class NumericalError(McalError):
    """A numerical failure during fitting or estimation (non-finite loss,
    extreme inverse-probability weight, too many failed replications)."""

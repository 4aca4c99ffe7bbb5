"""Exception types shared across the package."""


class ApcError(Exception):
    """Base class for all package errors."""


class DomainError(ApcError, ValueError):
    """An index or argument falls outside its valid range."""


class ConfigurationError(ApcError, ValueError):
    """Inconsistent model or grid configuration."""


class GeometryError(ApcError, ValueError):
    """A rate table does not describe a regular age-period grid."""


class RateTableParseError(ApcError, ValueError):
    """A rate table CSV failed validation; carries the offending row."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NumericalRankError(ApcError, ValueError):
    """A constraint matrix is rank deficient; carries the detected rank."""

    def __init__(self, message, detected_rank):
        super().__init__(f"{message} (detected rank {detected_rank})")
        self.detected_rank = detected_rank


class FitError(ApcError, RuntimeError):
    """Model fitting failed numerically."""


class DependentColumnsWarning(UserWarning):
    """Numerically dependent design columns were dropped during assembly."""


class FlatSelectionWarning(UserWarning):
    """Smoothing-parameter criterion was flat across all candidates."""

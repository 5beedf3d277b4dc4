"""Exception types raised across the package."""


class MarigoldError(Exception):
    """Base class for all package errors."""


class DimensionError(MarigoldError, ValueError):
    """Empty input, zero dimension or mismatched shapes."""


class InvalidValueError(MarigoldError, ValueError):
    """NaN/Inf input or a value outside its allowed range."""


class DomainError(MarigoldError, ValueError):
    """A quantity lies outside the domain of a formula (e.g. log of a nonpositive loss)."""


class ConfigError(MarigoldError):
    """Invalid or unreadable run configuration."""


class NumericalFailure(MarigoldError, FloatingPointError):
    """A run produced non-finite losses or parameters."""

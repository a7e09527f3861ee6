"""Exception types shared across the package."""


class QReadoutError(Exception):
    """Base class for package-specific errors."""


class ConfigurationError(QReadoutError, ValueError):
    """A configuration value violates a documented bound."""


class ValidationError(QReadoutError, ValueError):
    """An argument fails a precondition of the operation."""


class DimensionError(QReadoutError, ValueError):
    """Array shapes or sizes do not line up."""


class NumericalDomainError(QReadoutError, ArithmeticError):
    """A numerical quantity left its valid domain (log of a nonpositive
    value, zero norm, non-finite intermediate)."""


class StateError(QReadoutError, RuntimeError):
    """Operation invoked on an object in the wrong state, e.g. an
    unfitted model."""

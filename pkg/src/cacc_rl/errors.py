"""Exception hierarchy shared by every module."""


class CaccError(Exception):
    """Base class for all package errors."""


class UsageError(CaccError, ValueError):
    """A caller violated an interface contract (bad index, arity, unknown id)."""


class DomainError(CaccError, ValueError):
    """An input lies outside the mathematical domain of a model (e.g. gap <= 0)."""


class NumericError(CaccError, ArithmeticError):
    """A NaN or infinite value appeared where a finite number is required."""


class ConfigError(CaccError):
    """Invalid configuration or schema."""


class DataError(CaccError):
    """Input data is empty, malformed, or insufficient."""


class CheckpointError(CaccError):
    """A checkpoint file could not be read or does not match the expected layout."""

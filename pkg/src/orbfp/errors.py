"""Exception hierarchy shared across the package."""


class OrbfpError(Exception):
    """Base class for all package errors."""


class ParameterError(OrbfpError, ValueError):
    """An argument is outside its documented range."""


class SignalLengthError(ParameterError):
    """A buffer is too short for the requested operation."""


class DataError(OrbfpError):
    """Malformed or inconsistent data on disk or in memory."""


class NumericalError(OrbfpError, ArithmeticError):
    """A computation produced non-finite values."""

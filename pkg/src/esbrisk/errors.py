"""Exception hierarchy."""


class EsbriskError(Exception):
    """Base class for all package errors."""


class ValidationError(EsbriskError):
    """Invalid inputs: bad dimensions, parameter domain violations, malformed files."""


class NumericalError(EsbriskError):
    """Numerical failure: non-finite values, overflow, optimizer breakdown."""

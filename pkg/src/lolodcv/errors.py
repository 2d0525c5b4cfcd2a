"""Exception hierarchy shared by every module.

``DataError`` covers bad input or configuration (CLI exit status 2);
``NumericalError`` covers solver failures (CLI exit status 3).
"""


class LoloDcvError(Exception):
    """Base class for all package errors."""


class DataError(LoloDcvError, ValueError):
    """Malformed input data, schema, or configuration."""


class NumericalError(LoloDcvError, ArithmeticError):
    """A numerical computation overflowed or produced non-finite values."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""


class DegenerateError(NumericalError):
    """The problem has no informative solution (e.g. an all-zero response)."""

"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1, data
problems exit 2, numerical failures exit 3.
"""


class MblrError(Exception):
    """Base class for package errors."""


class UsageError(MblrError):
    """Invalid flag or option combination."""


class DataError(MblrError):
    """Malformed input data, schema violations, or precondition failures."""


class NumericalError(MblrError):
    """Numerical failure: non-finite objective, indefinite Hessian, underflow."""

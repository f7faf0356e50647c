"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data and
format problems exit 2, numeric failures exit 3.
"""


class HcrnetError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(HcrnetError, ValueError):
    """A tensor shape or dimension contract was violated."""


class NumericError(HcrnetError, ArithmeticError):
    """A numeric invariant failed: NaN, Inf, or division by zero."""


class FormatError(HcrnetError, ValueError):
    """A binary file does not follow its declared format."""


class DataError(HcrnetError, ValueError):
    """Dataset contents violate the input contract."""


class UsageError(HcrnetError):
    """Bad command-line invocation."""

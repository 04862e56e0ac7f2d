"""Exception types shared across the package.

The CLI maps `ValidationError` (and its `DimensionError` subclass) to exit
code 1 and `NumericError` to exit code 2.
"""


class HetSheafError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HetSheafError, ValueError):
    """Malformed input: bad files, out-of-range ids, inconsistent configs."""


class DimensionError(ValidationError):
    """Tensor or parameter shapes do not agree."""


class NumericError(HetSheafError, ArithmeticError):
    """A NaN/Inf appeared where finite values are required."""

"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree with what an operation requires."""


class RangeError(IndexError):
    """An index (region or time interval) falls outside the configured axis."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values; the message names the stage."""

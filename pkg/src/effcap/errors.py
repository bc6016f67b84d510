"""Exception types shared across the package.

The CLI maps these onto its exit codes: ``ValidationError`` -> 1,
``NumericError`` -> 2.
"""


class EffcapError(Exception):
    pass


class ValidationError(EffcapError, ValueError):
    """Bad input: malformed files, violated preconditions, bad config."""


class NumericError(EffcapError, ArithmeticError):
    """Overflow, divergence or a factorization that could not be rescued."""

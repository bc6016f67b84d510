"""Randomization tests of effective capacity, finite-sample interpolation
constructions and the linear-model (kernel) view of implicit regularization."""

from .errors import EffcapError, NumericError, ValidationError

__version__ = "0.1.0"

__all__ = ["EffcapError", "NumericError", "ValidationError", "__version__"]

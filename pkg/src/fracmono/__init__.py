"""Fractional conductivity operators, exterior DN maps and monotonicity tests."""

from fracmono.errors import FracmonoError, NumericalError, ValidationError

__version__ = "0.1.0"

__all__ = ["FracmonoError", "NumericalError", "ValidationError", "__version__"]

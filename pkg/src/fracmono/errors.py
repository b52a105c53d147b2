"""Exception types shared across the package."""


class FracmonoError(Exception):
    """Base class for all package errors."""


class ValidationError(FracmonoError, ValueError):
    """Input violates a precondition or a type invariant."""


class NumericalError(FracmonoError, ArithmeticError):
    """A numerical routine failed or produced an unusable result."""

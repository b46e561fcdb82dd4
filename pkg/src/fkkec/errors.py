"""Exception types shared across the package."""


class FkkecError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FkkecError, ValueError):
    """Input data is malformed (non-finite values, bad shapes, ...)."""


class InvalidParameterError(FkkecError, ValueError):
    """A configuration or keyword parameter is out of range."""


class InvalidReferenceError(InvalidInputError):
    """Reference spectrum is not strictly positive."""


class NumericalError(FkkecError, ArithmeticError):
    """A linear-algebra kernel failed (singular system, no convergence)."""


class FormatError(FkkecError, ValueError):
    """A file or byte stream does not follow the expected layout."""


class IncompatibleModelError(FkkecError, ValueError):
    """A trained model cannot be applied to the given data."""

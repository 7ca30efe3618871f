"""Package specific exceptions."""


class StkrigError(Exception):
    """Root of the stkrig exception hierarchy."""


class ShapeError(StkrigError, ValueError):
    """Raised when matrix or array shapes are incompatible.

    Examples
    --------
    >>> import numpy as np
    >>> from stkrig import autodiff as ad
    >>> from stkrig.exceptions import ShapeError
    >>> try:
    ...     ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
    ... except ShapeError as e:
    ...     print(e)
    matmul: cannot multiply shapes (2, 3) and (2, 3).
    """


class BackwardError(StkrigError, RuntimeError):
    """Raised when a reverse pass cannot be performed on a tape."""


class ConfigError(StkrigError, ValueError):
    """Raised for invalid or unknown configuration entries."""


class DataError(StkrigError, ValueError):
    """Raised when input files or arrays do not describe a valid dataset."""


class NumericalError(StkrigError, FloatingPointError):
    """Raised when NaN or Inf values appear in losses, gradients or outputs."""


class NotFittedError(StkrigError, ValueError, AttributeError):
    """Raised when inference is requested without model parameters.

    This class inherits from both ValueError and AttributeError to help with
    exception handling.
    """


class UsageError(StkrigError):
    """Raised for invalid command-line usage."""

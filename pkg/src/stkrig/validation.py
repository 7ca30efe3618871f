"""Collection of validation functions shared across modules."""

from typing import Any, Iterable, Optional

import numpy as np
from numpy.typing import NDArray

from .exceptions import ConfigError, DataError, NumericalError, ShapeError


def error_invalid_entry(*arrays: Any, what: str = "arrays"):
    """
    Raise an error if any of the provided arrays contains NaN or Infinite (Inf) values.

    Parameters
    ----------
    *arrays :
        Arrays to be checked for invalid entries.
    what :
        Description of the arrays, used in the error message.

    Raises
    ------
    NumericalError
        If any NaN or Inf values are found in the provided arrays.
    """
    any_infs = any(np.any(np.isinf(np.asarray(a))) for a in arrays)
    any_nans = any(np.any(np.isnan(np.asarray(a))) for a in arrays)
    if any_infs and any_nans:
        raise NumericalError(f"The provided {what} contain Infs and Nans!")
    elif any_infs:
        raise NumericalError(f"The provided {what} contain Infs!")
    elif any_nans:
        raise NumericalError(f"The provided {what} contain Nans!")


def check_matrix(array: Any, name: str, square: bool = False) -> NDArray:
    """
    Convert to a float64 2D array and check its dimensionality.

    Parameters
    ----------
    array :
        Array-like object.
    name :
        Name used in the error message.
    square :
        If True, the matrix must be square.

    Returns
    -------
    :
        The array as a C-contiguous float64 numpy array.

    Raises
    ------
    ShapeError
        If the array is not two-dimensional, or not square when requested.
    """
    try:
        array = np.ascontiguousarray(array, dtype=np.float64)
    except (TypeError, ValueError):
        raise DataError(f"{name} must be a numeric array-like object.")
    if array.ndim != 2:
        raise ShapeError(
            f"{name} must be a 2 dimensional array. "
            f"{array.ndim} dimensional array provided instead!"
        )
    if square and array.shape[0] != array.shape[1]:
        raise ShapeError(f"{name} must be square, shape {array.shape} provided instead!")
    return array


def check_nonnegative(array: NDArray, name: str):
    """Raise if any entry of ``array`` is negative."""
    if np.any(array < 0):
        raise DataError(f"{name} must be nonnegative.")


def check_same_shape(*arrays: Any, names: Iterable[str], op: str):
    """
    Check that all arrays share the same shape.

    Raises
    ------
    ShapeError
        Naming every shape involved.
    """
    shapes = [tuple(np.shape(a)) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        described = ", ".join(f"{n} {s}" for n, s in zip(names, shapes))
        raise ShapeError(f"{op}: shape mismatch between {described}.")


def check_positive(value: Any, name: str, strict: bool = True) -> float:
    """
    Convert to float and check the sign.

    Raises
    ------
    ConfigError
        If the value is not numeric or not positive.
    """
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Could not convert {name}: {value!r} to a float.")
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ConfigError(f"{name} must be {bound}, {value} provided instead!")
    return value


def check_integer(
    value: Any, name: str, minimum: int = 0, maximum: Optional[int] = None
) -> int:
    """
    Check that ``value`` is an integer in ``[minimum, maximum]``.

    Raises
    ------
    ConfigError
        If the value is not an integer or out of range.
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{name} must be an integer, {value!r} provided instead!")
    value = int(value)
    if value < minimum or (maximum is not None and value > maximum):
        upper = "" if maximum is None else f" and <= {maximum}"
        raise ConfigError(f"{name} must be >= {minimum}{upper}, {value} provided instead!")
    return value


def check_bool(value: Any, name: str) -> bool:
    """
    Raises
    ------
    ConfigError
        If ``value`` is not a boolean.
    """
    if not isinstance(value, (bool, np.bool_)):
        raise ConfigError(f"{name} must be a boolean, {value!r} provided instead!")
    return bool(value)


def check_fraction(value: Any, name: str, closed_right: bool = False) -> float:
    """
    Check that ``value`` lies in ``(0, 1)`` (or ``(0, 1]`` when ``closed_right``).

    Raises
    ------
    ConfigError
        If the value lies outside the interval.
    """
    value = check_positive(value, name)
    if value > 1 or (value == 1 and not closed_right):
        interval = "(0, 1]" if closed_right else "(0, 1)"
        raise ConfigError(
            f"{name} should lie in the {interval} interval. {value} provided instead!"
        )
    return value


def check_choice(value: Any, name: str, choices: Iterable[str]) -> str:
    """Check that ``value`` is one of ``choices``."""
    choices = tuple(choices)
    if value not in choices:
        raise ConfigError(f"{name} must be one of {choices}, {value!r} provided instead!")
    return value


def check_mask(mask: Any, n_nodes: int, name: str = "known_mask") -> NDArray:
    """
    Convert a per-node mask to a boolean vector of length ``n_nodes``.

    Raises
    ------
    ShapeError
        If the mask length does not match the number of nodes.
    """
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape[0] != n_nodes:
        raise ShapeError(
            f"{name} must have one entry per node: expected {n_nodes}, got {mask.shape[0]}."
        )
    return mask

from contextlib import nullcontext as does_not_raise

import numpy as np
import pytest

from stkrig import validation
from stkrig.exceptions import ConfigError, DataError, NumericalError, ShapeError


@pytest.mark.parametrize(
    "array, expectation",
    [
        (np.array([[1.0], [2.0], [3.0]]), does_not_raise()),
        (np.array([[1.0], [2.0], [np.nan]]), pytest.raises(NumericalError, match="contain Nans")),
        (np.array([[1.0], [np.inf], [3.0]]), pytest.raises(NumericalError, match="contain Infs")),
        (
            np.array([[1.0], [np.inf], [np.nan]]),
            pytest.raises(NumericalError, match="contain Infs and Nans"),
        ),
    ],
)
def test_error_invalid_entry(array, expectation):
    """Test that invalid entries of any array raise with the right message."""
    with expectation:
        validation.error_invalid_entry(np.ones((3, 1)), array, what="gradients")


def test_error_invalid_entry_names_what():
    with pytest.raises(NumericalError, match="The provided gradients contain Nans"):
        validation.error_invalid_entry(np.array([np.nan]), what="gradients")


@pytest.mark.parametrize(
    "value, expectation",
    [
        (True, does_not_raise()),
        (np.bool_(False), does_not_raise()),
        (1, pytest.raises(ConfigError, match="directed must be a boolean, 1 provided")),
        ("false", pytest.raises(ConfigError, match="directed must be a boolean")),
        (None, pytest.raises(ConfigError, match="directed must be a boolean")),
    ],
)
def test_check_bool(value, expectation):
    with expectation:
        assert validation.check_bool(value, "directed") is bool(value)


@pytest.mark.parametrize(
    "array, square, expectation",
    [
        ([[1, 2], [3, 4]], True, does_not_raise()),
        ([[1, 2, 3]], False, does_not_raise()),
        ([[1, 2, 3]], True, pytest.raises(ShapeError, match="must be square")),
        ([1, 2, 3], False, pytest.raises(ShapeError, match="must be a 2 dimensional array")),
        ([["a", "b"]], False, pytest.raises(DataError, match="numeric array-like")),
    ],
)
def test_check_matrix(array, square, expectation):
    with expectation:
        out = validation.check_matrix(array, "adj", square=square)
        assert out.dtype == np.float64 and out.flags["C_CONTIGUOUS"]


def test_check_nonnegative():
    validation.check_nonnegative(np.zeros((2, 2)), "dist")
    with pytest.raises(DataError, match="dist must be nonnegative"):
        validation.check_nonnegative(np.array([0.0, -1e-12]), "dist")


def test_check_same_shape_names_every_shape():
    with pytest.raises(ShapeError, match=r"add: shape mismatch between a \(2, 3\), b \(3, 2\)"):
        validation.check_same_shape(np.ones((2, 3)), np.ones((3, 2)), names=("a", "b"), op="add")


@pytest.mark.parametrize(
    "value, strict, expectation",
    [
        (1, True, does_not_raise()),
        (0, False, does_not_raise()),
        (0, True, pytest.raises(ConfigError, match="must be > 0")),
        (-1, False, pytest.raises(ConfigError, match="must be >= 0")),
        (np.inf, True, pytest.raises(ConfigError, match="must be > 0")),
        ("fast", True, pytest.raises(ConfigError, match="Could not convert rate")),
    ],
)
def test_check_positive(value, strict, expectation):
    with expectation:
        assert isinstance(validation.check_positive(value, "rate", strict=strict), float)


@pytest.mark.parametrize(
    "value, expectation",
    [
        (3, does_not_raise()),
        (np.int64(3), does_not_raise()),
        (3.0, does_not_raise()),
        (3.5, pytest.raises(ConfigError, match="must be an integer")),
        (True, pytest.raises(ConfigError, match="must be an integer")),
        (0, pytest.raises(ConfigError, match="must be >= 1 and <= 5")),
        (6, pytest.raises(ConfigError, match="must be >= 1 and <= 5")),
    ],
)
def test_check_integer(value, expectation):
    with expectation:
        assert validation.check_integer(value, "k", minimum=1, maximum=5) == 3


@pytest.mark.parametrize(
    "value, closed_right, expectation",
    [
        (0.5, False, does_not_raise()),
        (1.0, True, does_not_raise()),
        (1.0, False, pytest.raises(ConfigError, match=r"\(0, 1\) interval")),
        (1.5, True, pytest.raises(ConfigError, match=r"\(0, 1\] interval")),
        (0.0, True, pytest.raises(ConfigError, match="must be > 0")),
    ],
)
def test_check_fraction(value, closed_right, expectation):
    with expectation:
        validation.check_fraction(value, "mask_fraction", closed_right=closed_right)


def test_check_choice():
    assert validation.check_choice("row", "norm", ("row", "none")) == "row"
    with pytest.raises(ConfigError, match=r"norm must be one of \('row', 'none'\)"):
        validation.check_choice("col", "norm", ("row", "none"))


def test_check_mask():
    mask = validation.check_mask([1, 0, 1], 3)
    assert mask.dtype == bool
    np.testing.assert_array_equal(mask, [True, False, True])
    with pytest.raises(ShapeError, match="expected 4, got 3"):
        validation.check_mask(mask, 4)

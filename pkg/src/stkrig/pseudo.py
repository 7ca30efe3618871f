"""k-nearest inverse distance weighting (k-IDW) for pseudo nodes."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import validation
from .exceptions import DataError, ShapeError

__all__ = ["PseudoFrame", "idw_weights", "k_idw", "k_idw_frames"]


def __dir__() -> list[str]:
    return __all__


class PseudoFrame(NamedTuple):
    """One frame of readings in which unknown rows were synthesized.

    Attributes
    ----------
    values :
        ``N x D`` readings.
    source_mask :
        True where the row is a real sensor reading, False where it was
        synthesized by k-IDW.
    """

    values: NDArray
    source_mask: NDArray


def idw_weights(
    dist: ArrayLike, known_mask: ArrayLike, k: int = 5, rho: float = 1.0
) -> NDArray:
    """
    Interpolation weights of every unknown node over the known sensors.

    Each unknown node gets weights ``d_i^-rho / sum d_i^-rho`` over its ``k``
    nearest known sensors (distance ties resolved by lower node index). A known
    sensor at distance zero receives the whole weight.

    Parameters
    ----------
    dist :
        ``N x N`` distance matrix; row ``u`` holds distances from node ``u``.
    known_mask :
        Boolean per node.
    k :
        Number of neighbors.
    rho :
        Decay rate, must be positive.

    Returns
    -------
    :
        ``N_u x N_k`` row-stochastic weight matrix, rows ordered as the unknown
        nodes and columns as the known nodes (both by increasing index).

    Raises
    ------
    DataError
        If fewer than ``k`` known sensors exist.
    """
    dist = validation.check_matrix(dist, "dist", square=True)
    known_mask = validation.check_mask(known_mask, dist.shape[0])
    k = validation.check_integer(k, "k", minimum=1)
    rho = validation.check_positive(rho, "rho")
    known = np.flatnonzero(known_mask)
    unknown = np.flatnonzero(~known_mask)
    if known.size < k:
        raise DataError(f"k-IDW needs at least k={k} known sensors, got {known.size}.")

    weights = np.zeros((unknown.size, known.size))
    if unknown.size == 0:
        return weights
    d_uk = dist[np.ix_(unknown, known)]
    # stable sort keeps the lower node index first among equal distances
    order = np.argsort(d_uk, axis=1, kind="stable")[:, :k]
    d_sel = np.take_along_axis(d_uk, order, axis=1)
    colocated = d_sel[:, 0] == 0
    with np.errstate(divide="ignore"):
        inv = np.where(colocated[:, None], 0.0, d_sel ** (-rho))
    inv[colocated, 0] = 1.0
    inv /= inv.sum(axis=1, keepdims=True)
    np.put_along_axis(weights, order, inv, axis=1)
    return weights


def k_idw(
    frame: ArrayLike,
    known_mask: ArrayLike,
    dist: ArrayLike,
    k: int = 5,
    rho: float = 1.0,
) -> PseudoFrame:
    """
    Synthesize readings for unknown nodes from their ``k`` nearest known sensors.

    Known rows pass through unchanged.

    Examples
    --------
    >>> import numpy as np
    >>> dist = np.array([[0., 1., 2.], [1., 0., 3.], [2., 3., 0.]])
    >>> frame = np.array([[5.0], [0.0], [3.0]])
    >>> k_idw(frame, [False, True, True], dist, k=2, rho=1.0).values[:, 0]
    array([1., 0., 3.])
    """
    frame = validation.check_matrix(frame, "frame")
    known_mask = validation.check_mask(known_mask, frame.shape[0])
    filled = k_idw_frames(frame[None], known_mask, dist, k=k, rho=rho)[0]
    return PseudoFrame(filled, known_mask.copy())


def k_idw_frames(
    frames: ArrayLike,
    known_mask: ArrayLike,
    dist: ArrayLike,
    k: int = 5,
    rho: float = 1.0,
) -> NDArray:
    """
    Apply :func:`k_idw` to a stack of frames of shape ``(T, N, D)``.

    The weights depend only on the node partition and are computed once.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError(f"frames must have shape (T, N, D), got {frames.shape}.")
    known_mask = validation.check_mask(known_mask, frames.shape[1])
    weights = idw_weights(dist, known_mask, k=k, rho=rho)
    filled = frames.copy()
    unknown = ~known_mask
    if unknown.any():
        filled[:, unknown, :] = np.einsum("uk,tkd->tud", weights, frames[:, known_mask, :])
    return filled

"""Sensor graphs, Gaussian-kernel adjacency and graph convolutions."""

from __future__ import annotations

from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from . import autodiff as ad
from . import validation
from .exceptions import ConfigError, DataError, ShapeError

__all__ = [
    "SensorGraph",
    "SubgraphSample",
    "gaussian_kernel_adjacency",
    "default_sigma",
    "normalize",
    "distances_from_coords",
    "graph_conv",
    "adaptive_graph_conv",
]

EARTH_RADIUS_M = 6_371_008.8

Adjacency = Union[NDArray, ad.DiffMatrix]


def __dir__() -> list[str]:
    return __all__


def default_sigma(dist: NDArray) -> float:
    """
    Kernel width used when none is configured: std of the off-diagonal distances.

    Non-finite distances (unreachable pairs) are ignored. Falls back to the mean
    distance when the standard deviation vanishes, and to 1 for a single node.
    """
    dist = np.asarray(dist, dtype=float)
    off = dist[~np.eye(dist.shape[0], dtype=bool)]
    off = off[np.isfinite(off)]
    if off.size == 0:
        return 1.0
    sigma = float(np.std(off))
    if sigma > 0:
        return sigma
    mean = float(np.mean(off))
    return mean if mean > 0 else 1.0


def gaussian_kernel_adjacency(
    dist: ArrayLike, sigma: float, threshold: float = 0.0
) -> NDArray:
    """
    Gaussian kernel adjacency ``A_ij = exp(-dist_ij^2 / sigma^2)``.

    Entries below ``threshold`` are set to zero and the diagonal to one (self-loops).

    Parameters
    ----------
    dist :
        Square nonnegative distance matrix. Infinite entries produce no edge.
    sigma :
        Kernel width, must be positive.
    threshold :
        Minimum kept weight.

    Raises
    ------
    ConfigError
        If ``sigma <= 0``.
    DataError
        If distances are negative.

    Examples
    --------
    >>> import numpy as np
    >>> adj = gaussian_kernel_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]), sigma=1.0)
    >>> np.round(adj, 6)
    array([[1.      , 0.367879],
           [0.367879, 1.      ]])
    """
    sigma = validation.check_positive(sigma, "sigma")
    dist = validation.check_matrix(dist, "dist", square=True)
    if np.any(dist < 0):
        raise DataError("dist must be nonnegative.")
    with np.errstate(over="ignore"):
        adj = np.exp(-np.square(dist) / sigma**2)
    adj[adj < threshold] = 0.0
    np.fill_diagonal(adj, 1.0)
    return adj


def normalize(adj: ArrayLike, add_self_loops: bool = False) -> NDArray:
    """
    Row-normalize a nonnegative square matrix, ``D^-1 A``.

    Parameters
    ----------
    adj :
        Nonnegative square matrix.
    add_self_loops :
        If True, the diagonal is set to one before normalizing.

    Returns
    -------
    :
        A row-stochastic matrix. An all-zero row (isolated node) becomes a one-hot
        self-loop row.

    Raises
    ------
    DataError
        If ``adj`` has negative entries.

    Examples
    --------
    >>> import numpy as np
    >>> normalize(np.array([[0.0, 1.0], [1.0, 0.0]]), add_self_loops=True)
    array([[0.5, 0.5],
           [0.5, 0.5]])
    """
    adj = validation.check_matrix(adj, "adj", square=True).copy()
    if np.any(adj < 0):
        raise DataError("adj must be nonnegative, found negative entries.")
    if add_self_loops:
        np.fill_diagonal(adj, 1.0)
    degree = adj.sum(axis=1)
    isolated = degree == 0
    adj[isolated, :] = 0.0
    adj[isolated, isolated] = 1.0
    degree[isolated] = 1.0
    return adj / degree[:, None]


def distances_from_coords(
    coords_a: ArrayLike, coords_b: Optional[ArrayLike] = None, units: str = "euclidean"
) -> NDArray:
    """
    Pairwise distances between two sets of 2-D positions.

    Parameters
    ----------
    coords_a, coords_b :
        Arrays of shape ``(n, 2)``; ``coords_b`` defaults to ``coords_a``.
        With ``units="degrees"`` columns are (longitude, latitude).
    units :
        ``"euclidean"`` (same units as the coordinates) or ``"degrees"``
        (great-circle distance in meters).
    """
    coords_a = np.asarray(coords_a, dtype=float)
    coords_b = coords_a if coords_b is None else np.asarray(coords_b, dtype=float)
    for name, c in (("coords_a", coords_a), ("coords_b", coords_b)):
        if c.ndim != 2 or c.shape[1] != 2:
            raise ShapeError(f"{name} must have shape (n, 2), got {c.shape}.")
    if units == "euclidean":
        return cdist(coords_a, coords_b)
    if units == "degrees":
        lon1, lat1 = np.radians(coords_a[:, :1]), np.radians(coords_a[:, 1:])
        lon2, lat2 = np.radians(coords_b[:, 0]), np.radians(coords_b[:, 1])
        a = (
            np.sin((lat2 - lat1) / 2.0) ** 2
            + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
        )
        return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    raise ConfigError(f"units must be 'euclidean' or 'degrees', {units!r} provided instead!")


class SensorGraph:
    """Immutable sensor graph.

    Holds the distance matrix, the raw Gaussian kernel and the row-normalized
    adjacency for both directions. Arrays are read-only so a graph can be
    shared across threads.

    Parameters
    ----------
    dist :
        ``n x n`` nonnegative distance matrix with zero diagonal.
    sigma :
        Kernel width; defaults to :func:`default_sigma`.
    threshold :
        Kernel weights below this value are dropped.
    directed :
        Whether the two directions differ. Defaults to ``not symmetric(dist)``.
    coords :
        Optional ``n x 2`` node positions.
    node_ids :
        Optional node labels; defaults to ``"0" .. "n-1"``.
    coord_units :
        Units of ``coords``, see :func:`distances_from_coords`.
    """

    def __init__(
        self,
        dist: ArrayLike,
        sigma: Optional[float] = None,
        threshold: float = 0.0,
        directed: Optional[bool] = None,
        coords: Optional[ArrayLike] = None,
        node_ids: Optional[Sequence[str]] = None,
        coord_units: str = "euclidean",
        kernel: Optional[ArrayLike] = None,
    ):
        dist = validation.check_matrix(dist, "dist", square=True).copy()
        if np.any(dist < 0):
            raise DataError("dist must be nonnegative.")
        if np.any(np.diag(dist) != 0):
            raise DataError("dist must have a zero diagonal.")
        n_nodes = dist.shape[0]
        if n_nodes == 0:
            raise DataError("A sensor graph needs at least one node.")
        symmetric = bool(np.array_equal(dist, dist.T))
        if directed is None:
            directed = not symmetric
        elif not directed and not symmetric:
            raise DataError("dist must be symmetric for an undirected graph.")

        self.sigma = default_sigma(dist) if sigma is None else float(sigma)
        self.threshold = float(threshold)
        if kernel is None:
            kernel = gaussian_kernel_adjacency(dist, self.sigma, self.threshold)
        else:
            kernel = validation.check_matrix(kernel, "kernel", square=True).copy()
        self.kernel = kernel
        self.dist = dist
        self.directed = bool(directed)
        self.adj_fwd = normalize(kernel)
        self.adj_bwd = normalize(kernel.T) if self.directed else self.adj_fwd

        if coords is not None:
            coords = np.array(coords, dtype=float)
            if coords.shape != (n_nodes, 2):
                raise ShapeError(f"coords must have shape ({n_nodes}, 2), got {coords.shape}.")
        self.coords = coords
        self.coord_units = coord_units
        if node_ids is None:
            node_ids = [str(i) for i in range(n_nodes)]
        if len(node_ids) != n_nodes:
            raise ShapeError(f"Expected {n_nodes} node ids, got {len(node_ids)}.")
        self.node_ids = [str(n) for n in node_ids]

        for arr in (self.dist, self.kernel, self.adj_fwd, self.adj_bwd, self.coords):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.dist.shape[0]

    @property
    def adjacencies(self) -> List[NDArray]:
        """``[adj_fwd]`` for undirected graphs, ``[adj_fwd, adj_bwd]`` otherwise."""
        return [self.adj_fwd, self.adj_bwd] if self.directed else [self.adj_fwd]

    @classmethod
    def from_coords(
        cls,
        coords: ArrayLike,
        units: str = "euclidean",
        node_ids: Optional[Sequence[str]] = None,
        sigma: Optional[float] = None,
        threshold: float = 0.0,
    ) -> "SensorGraph":
        """Build an undirected graph from node positions."""
        coords = np.asarray(coords, dtype=float)
        dist = distances_from_coords(coords, units=units)
        np.fill_diagonal(dist, 0.0)
        return cls(
            dist,
            sigma=sigma,
            threshold=threshold,
            directed=False,
            coords=coords,
            node_ids=node_ids,
            coord_units=units,
        )

    def restrict(self, index: ArrayLike) -> "SensorGraph":
        """
        Subgraph induced by ``index``, with the adjacency re-normalized.

        The kernel width of the parent graph is kept.
        """
        index = np.asarray(index, dtype=int)
        sub = np.ix_(index, index)
        return SensorGraph(
            self.dist[sub],
            sigma=self.sigma,
            threshold=self.threshold,
            directed=self.directed,
            coords=None if self.coords is None else self.coords[index],
            node_ids=[self.node_ids[i] for i in index],
            coord_units=self.coord_units,
            kernel=self.kernel[sub],
        )

    def extend(self, coords: ArrayLike, node_ids: Sequence[str]) -> "SensorGraph":
        """
        Append new locations, computing their distances from coordinates.

        Used to infer readings at arbitrary unobserved locations. The parent kernel
        width is kept so the existing edges are unchanged.

        Raises
        ------
        DataError
            If this graph carries no coordinates.
        """
        if self.coords is None:
            raise DataError("Extending a graph with new locations requires node coordinates.")
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        all_coords = np.vstack([self.coords, coords])
        cross = distances_from_coords(coords, all_coords, units=self.coord_units)
        n_old, n_new = self.n_nodes, coords.shape[0]
        dist = np.zeros((n_old + n_new, n_old + n_new))
        dist[:n_old, :n_old] = self.dist
        dist[n_old:, :] = cross
        dist[:n_old, n_old:] = cross[:, :n_old].T
        np.fill_diagonal(dist, 0.0)
        return SensorGraph(
            dist,
            sigma=self.sigma,
            threshold=self.threshold,
            directed=self.directed,
            coords=all_coords,
            node_ids=list(self.node_ids) + [str(n) for n in node_ids],
            coord_units=self.coord_units,
        )

    def __repr__(self):
        return (
            f"SensorGraph(n_nodes={self.n_nodes}, directed={self.directed}, "
            f"sigma={self.sigma:.6g}, threshold={self.threshold})"
        )


class SubgraphSample(NamedTuple):
    """Randomly sampled training subgraph.

    Attributes
    ----------
    node_ids :
        Indices into the parent graph.
    known_mask :
        True for nodes whose readings are observed.
    graph :
        The parent graph restricted to ``node_ids``.
    """

    node_ids: NDArray
    known_mask: NDArray
    graph: SensorGraph


def _as_adjacency(adj: Adjacency, n_rows: int) -> ad.DiffMatrix:
    adj = adj if isinstance(adj, ad.DiffMatrix) else ad.constant(adj)
    if adj.shape != (n_rows, n_rows):
        raise ShapeError(
            f"graph convolution: adjacency shape {adj.shape} does not match {n_rows} nodes."
        )
    return adj


def _diffusion(x: ad.DiffMatrix, adj: Adjacency, weights: Sequence[ad.DiffMatrix]):
    """``sum_l adj^l x W^l`` with the powers applied cumulatively."""
    adj = _as_adjacency(adj, x.rows)
    total, h = None, x
    for w in weights:
        if w.rows != x.cols:
            raise ShapeError(
                f"graph convolution: weight shape {w.shape} does not match input shape {x.shape}."
            )
        h = ad.matmul(adj, h)
        term = ad.matmul(h, w)
        total = term if total is None else ad.add(total, term)
    return total


def _activate(z: ad.DiffMatrix, activation: Optional[str]) -> ad.DiffMatrix:
    if activation is None:
        return z
    if activation == "relu":
        return ad.relu(z)
    raise ConfigError(f"Unknown activation {activation!r}.")


def graph_conv(
    x: ad.DiffMatrix,
    adj: Adjacency,
    weights: Sequence[ad.DiffMatrix],
    activation: Optional[str] = "relu",
) -> ad.DiffMatrix:
    """
    Graph convolution ``phi(sum_{l=1..L} A^l X W^l)``.

    Parameters
    ----------
    x :
        ``N x D`` node features.
    adj :
        ``N x N`` normalized adjacency (array or constant matrix).
    weights :
        ``L`` matrices of shape ``D x F``, one per order.
    activation :
        ``"relu"`` or None for a linear convolution.

    Raises
    ------
    ShapeError
        If shapes are inconsistent or no weights are given.
    """
    if len(weights) < 1:
        raise ShapeError("graph_conv requires at least one order (L >= 1).")
    return _activate(_diffusion(x, adj, weights), activation)


def adaptive_graph_conv(
    x: ad.DiffMatrix,
    adj: Adjacency,
    adaptive_adj: ad.DiffMatrix,
    weights_p: Sequence[ad.DiffMatrix],
    weights_d: Sequence[ad.DiffMatrix],
    activation: Optional[str] = "relu",
    adj_bwd: Optional[Adjacency] = None,
    weights_pb: Optional[Sequence[ad.DiffMatrix]] = None,
) -> ad.DiffMatrix:
    """
    Graph convolution with an additional learned adjacency.

    Computes ``phi(sum_l A^l X W_p^l + Â^l X W_d^l)``; for directed graphs the
    reverse adjacency contributes ``sum_l A_bwd^l X W_pb^l`` as well. Gradients flow
    into ``adaptive_adj``.
    """
    if len(weights_p) < 1 or len(weights_d) < 1:
        raise ShapeError("adaptive_graph_conv requires at least one order (L >= 1).")
    if adaptive_adj.shape != (x.rows, x.rows):
        raise ShapeError(
            f"adaptive_graph_conv: adaptive adjacency shape {adaptive_adj.shape} "
            f"does not match input shape {x.shape}."
        )
    total = ad.add(_diffusion(x, adj, weights_p), _diffusion(x, adaptive_adj, weights_d))
    if adj_bwd is not None:
        if weights_pb is None:
            raise ShapeError("adaptive_graph_conv: reverse adjacency given without weights.")
        total = ad.add(total, _diffusion(x, adj_bwd, weights_pb))
    return _activate(total, activation)

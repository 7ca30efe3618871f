from contextlib import nullcontext as does_not_raise

import numpy as np
import pytest

from stkrig import autodiff as ad
from stkrig import graph
from stkrig.exceptions import ConfigError, DataError, ShapeError


def loop_graph_conv(x, adj, weights):
    """Scalar-loop ``sum_l A^l X W^l`` without activation."""
    n, d = x.shape
    f = weights[0].shape[1]
    out = np.zeros((n, f))
    h = x.copy()
    for w in weights:
        nxt = np.zeros_like(h)
        for i in range(n):
            for j in range(n):
                for c in range(d):
                    nxt[i, c] += adj[i, j] * h[j, c]
        h = nxt
        for i in range(n):
            for o in range(f):
                for c in range(d):
                    out[i, o] += h[i, c] * w[c, o]
    return out


class TestKernel:
    def test_diagonal_is_one_and_symmetric(self, toy_graph):
        kernel = graph.gaussian_kernel_adjacency(toy_graph.dist, toy_graph.sigma)
        np.testing.assert_array_equal(np.diag(kernel), 1.0)
        np.testing.assert_allclose(kernel, kernel.T)

    def test_threshold_drops_weak_edges(self):
        dist = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 1.0], [3.0, 1.0, 0.0]])
        kernel = graph.gaussian_kernel_adjacency(dist, sigma=1.0, threshold=0.1)
        assert kernel[0, 2] == 0.0
        assert kernel[0, 1] == pytest.approx(np.exp(-1.0))

    def test_infinite_distance_has_no_edge(self):
        dist = np.array([[0.0, np.inf], [np.inf, 0.0]])
        np.testing.assert_array_equal(graph.gaussian_kernel_adjacency(dist, 1.0), np.eye(2))

    @pytest.mark.parametrize(
        "sigma, expectation",
        [
            (1.0, does_not_raise()),
            (0.0, pytest.raises(ConfigError, match="sigma must be > 0")),
            (-2.0, pytest.raises(ConfigError, match="sigma must be > 0")),
        ],
    )
    def test_sigma_validation(self, sigma, expectation):
        with expectation:
            graph.gaussian_kernel_adjacency(np.zeros((2, 2)), sigma)

    def test_default_sigma_is_off_diagonal_std(self):
        dist = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 4.0], [2.0, 4.0, 0.0]])
        assert graph.default_sigma(dist) == pytest.approx(np.std([1.0, 2.0, 1.0, 4.0, 2.0, 4.0]))

    def test_default_sigma_single_node(self):
        assert graph.default_sigma(np.zeros((1, 1))) == 1.0


class TestNormalize:
    def test_row_stochastic(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = rng.integers(1, 9)
            adj = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) > 0.3)
            np.testing.assert_allclose(graph.normalize(adj).sum(axis=1), 1.0, atol=1e-12)

    def test_isolated_node_gets_self_loop(self):
        out = graph.normalize(np.array([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_array_equal(out, [[1.0, 0.0], [0.5, 0.5]])

    def test_negative_entries_rejected(self):
        with pytest.raises(DataError, match="nonnegative"):
            graph.normalize(np.array([[1.0, -1.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError, match="square"):
            graph.normalize(np.ones((2, 3)))


class TestDistances:
    def test_euclidean(self):
        d = graph.distances_from_coords(np.array([[0.0, 0.0], [3.0, 4.0]]))
        np.testing.assert_allclose(d, [[0.0, 5.0], [5.0, 0.0]])

    def test_degrees_quarter_meridian(self):
        d = graph.distances_from_coords(np.array([[0.0, 0.0]]), np.array([[0.0, 90.0]]), units="degrees")
        assert d[0, 0] == pytest.approx(np.pi / 2 * graph.EARTH_RADIUS_M)

    def test_unknown_units(self):
        with pytest.raises(ConfigError, match="units must be"):
            graph.distances_from_coords(np.zeros((2, 2)), units="miles")

    def test_bad_coords_shape(self):
        with pytest.raises(ShapeError, match=r"must have shape \(n, 2\)"):
            graph.distances_from_coords(np.zeros((2, 3)))


class TestSensorGraph:
    def test_undirected_from_coords(self, toy_graph):
        assert not toy_graph.directed
        assert toy_graph.n_nodes == 6
        assert len(toy_graph.adjacencies) == 1
        np.testing.assert_allclose(toy_graph.adj_fwd.sum(axis=1), 1.0, atol=1e-12)

    def test_directed_inferred_from_asymmetry(self, directed_graph):
        assert directed_graph.directed
        assert len(directed_graph.adjacencies) == 2
        np.testing.assert_allclose(directed_graph.adj_bwd, graph.normalize(directed_graph.kernel.T))

    def test_arrays_are_read_only(self, toy_graph):
        with pytest.raises(ValueError):
            toy_graph.adj_fwd[0, 0] = 2.0

    @pytest.mark.parametrize(
        "dist, kwargs, expectation",
        [
            (np.array([[0.0, 1.0], [1.0, 0.0]]), {}, does_not_raise()),
            (np.array([[0.0, -1.0], [-1.0, 0.0]]), {}, pytest.raises(DataError, match="nonnegative")),
            (np.array([[1.0, 1.0], [1.0, 0.0]]), {}, pytest.raises(DataError, match="zero diagonal")),
            (np.ones((2, 3)), {}, pytest.raises(ShapeError, match="square")),
            (
                np.array([[0.0, 1.0], [2.0, 0.0]]),
                {"directed": False},
                pytest.raises(DataError, match="symmetric"),
            ),
            (
                np.array([[0.0, 1.0], [1.0, 0.0]]),
                {"node_ids": ["a"]},
                pytest.raises(ShapeError, match="node ids"),
            ),
        ],
    )
    def test_validation(self, dist, kwargs, expectation):
        with expectation:
            graph.SensorGraph(dist, **kwargs)

    def test_restrict_keeps_kernel_width(self, toy_graph):
        sub = toy_graph.restrict([0, 2, 5])
        assert sub.sigma == toy_graph.sigma
        assert sub.node_ids == ["n0", "n2", "n5"]
        np.testing.assert_array_equal(sub.dist, toy_graph.dist[np.ix_([0, 2, 5], [0, 2, 5])])
        np.testing.assert_allclose(sub.adj_fwd.sum(axis=1), 1.0)

    def test_extend_appends_locations(self, toy_graph):
        new = np.array([[0.5, 0.5], [0.1, 0.9]])
        ext = toy_graph.extend(new, ["u0", "u1"])
        assert ext.n_nodes == 8
        assert ext.node_ids[-2:] == ["u0", "u1"]
        np.testing.assert_array_equal(ext.dist[:6, :6], toy_graph.dist)
        np.testing.assert_allclose(ext.dist[6, :6], np.linalg.norm(toy_graph.coords - new[0], axis=1))
        np.testing.assert_allclose(ext.dist, ext.dist.T)

    def test_extend_requires_coords(self):
        g = graph.SensorGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(DataError, match="coordinates"):
            g.extend([[0.0, 0.0]], ["u"])


class TestGraphConv:
    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n, d, f, n_layers = rng.integers(2, 6), rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            adj = graph.normalize(rng.uniform(size=(n, n)))
            x = rng.standard_normal((n, d))
            weights = [rng.standard_normal((d, f)) for _ in range(n_layers)]
            out = graph.graph_conv(
                ad.constant(x), adj, [ad.constant(w) for w in weights], activation=None
            )
            np.testing.assert_allclose(out.values, loop_graph_conv(x, adj, weights), atol=1e-12)

    def test_relu_activation(self, toy_graph, rng):
        x = ad.constant(rng.standard_normal((6, 1)))
        w = [ad.constant(rng.standard_normal((1, 3)))]
        linear = graph.graph_conv(x, toy_graph.adj_fwd, w, activation=None).values
        np.testing.assert_array_equal(
            graph.graph_conv(x, toy_graph.adj_fwd, w).values, np.maximum(linear, 0.0)
        )

    def test_unknown_activation(self, toy_graph):
        with pytest.raises(ConfigError, match="Unknown activation"):
            graph.graph_conv(ad.constant(np.ones((6, 1))), toy_graph.adj_fwd, [ad.constant(np.ones((1, 2)))], "gelu")

    @pytest.mark.parametrize(
        "x_shape, w_shape, n_weights, match",
        [
            ((5, 1), (1, 2), 1, "adjacency shape"),
            ((6, 2), (1, 2), 1, "weight shape"),
            ((6, 1), (1, 2), 0, "at least one order"),
        ],
    )
    def test_shape_errors(self, toy_graph, x_shape, w_shape, n_weights, match):
        weights = [ad.constant(np.ones(w_shape)) for _ in range(n_weights)]
        with pytest.raises(ShapeError, match=match):
            graph.graph_conv(ad.constant(np.ones(x_shape)), toy_graph.adj_fwd, weights)

    def test_gradients(self, toy_graph, rng):
        x = ad.constant(rng.standard_normal((6, 2)))
        weights = [ad.parameter(rng.standard_normal((2, 3)), name=f"w{i}") for i in range(3)]

        def fn():
            out = graph.graph_conv(x, toy_graph.adj_fwd, weights, activation=None)
            return ad.sum_all(ad.tanh(out))

        assert ad.check_gradients(fn, weights).passed


class TestAdaptiveGraphConv:
    def test_matches_two_plain_convolutions(self, directed_graph, rng):
        x = rng.standard_normal((6, 2))
        adaptive = rng.uniform(size=(6, 6))
        wp, wd, wb = ([rng.standard_normal((2, 3)) for _ in range(2)] for _ in range(3))
        out = graph.adaptive_graph_conv(
            ad.constant(x),
            directed_graph.adj_fwd,
            ad.constant(adaptive),
            [ad.constant(w) for w in wp],
            [ad.constant(w) for w in wd],
            activation=None,
            adj_bwd=directed_graph.adj_bwd,
            weights_pb=[ad.constant(w) for w in wb],
        )
        expected = (
            loop_graph_conv(x, directed_graph.adj_fwd, wp)
            + loop_graph_conv(x, adaptive, wd)
            + loop_graph_conv(x, directed_graph.adj_bwd, wb)
        )
        np.testing.assert_allclose(out.values, expected, atol=1e-12)

    def test_gradient_reaches_adaptive_adjacency(self, toy_graph, rng):
        x = ad.constant(rng.standard_normal((6, 1)))
        adaptive = ad.parameter(rng.uniform(size=(6, 6)), name="adaptive")
        wp = [ad.parameter(rng.standard_normal((1, 2)), name="wp")]
        wd = [ad.parameter(rng.standard_normal((1, 2)), name="wd")]

        def fn():
            out = graph.adaptive_graph_conv(x, toy_graph.adj_fwd, adaptive, wp, wd, activation=None)
            return ad.sum_all(ad.tanh(out))

        assert ad.check_gradients(fn, [adaptive, wp[0], wd[0]]).passed

    def test_reverse_adjacency_needs_weights(self, directed_graph):
        one = [ad.constant(np.ones((1, 2)))]
        with pytest.raises(ShapeError, match="without weights"):
            graph.adaptive_graph_conv(
                ad.constant(np.ones((6, 1))),
                directed_graph.adj_fwd,
                ad.constant(np.eye(6)),
                one,
                one,
                adj_bwd=directed_graph.adj_bwd,
            )

    def test_adaptive_shape_mismatch(self, toy_graph):
        one = [ad.constant(np.ones((1, 2)))]
        with pytest.raises(ShapeError, match="adaptive adjacency shape"):
            graph.adaptive_graph_conv(
                ad.constant(np.ones((6, 1))), toy_graph.adj_fwd, ad.constant(np.eye(5)), one, one
            )

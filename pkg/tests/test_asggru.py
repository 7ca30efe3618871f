from contextlib import nullcontext as does_not_raise

import numpy as np
import pytest

from stkrig import asggru
from stkrig import autodiff as ad
from stkrig.exceptions import ConfigError, ShapeError
from stkrig.graph import normalize
from stkrig.model import ModelConfig, init_params


def make_params(n_features=1, hidden=3, n_layers=2, directed=False, alpha=2.0, seed=0):
    config = ModelConfig(
        T=9,
        T_s=2,
        T_k=4,
        hidden=hidden,
        n_layers=n_layers,
        n_features=n_features,
        directed=directed,
        alpha=alpha,
        variant="long_only",
    )
    params = init_params(config, seed=seed)
    return params, asggru.AsgGruParams.from_params(params, n_layers, directed, alpha=alpha)


def loop_adjacency(m1, m2, alpha, row_norm):
    n, f = m1.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            p_ij = sum(m1[i, c] * m2[j, c] for c in range(f))
            p_ji = sum(m1[j, c] * m2[i, c] for c in range(f))
            out[i, j] = max(np.tanh(alpha * (p_ij - p_ji)), 0.0)
    if row_norm:
        for i in range(n):
            total = sum(out[i])
            if total != 0:
                out[i] = out[i] / total
    return out


def random_adjacency(n, rng):
    kernel = rng.uniform(size=(n, n))
    np.fill_diagonal(kernel, 1.0)
    return normalize(kernel)


@pytest.mark.parametrize("adaptive_norm", ["none", "row"])
def test_adjacency_matches_scalar_loop(adaptive_norm):
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, f = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        m1, m2 = rng.standard_normal((n, f)), rng.standard_normal((n, f))
        alpha = float(rng.uniform(0.5, 3.0))
        out = asggru.adjacency_from_embeddings(
            ad.constant(m1), ad.constant(m2), alpha=alpha, adaptive_norm=adaptive_norm
        )
        np.testing.assert_allclose(
            out.values, loop_adjacency(m1, m2, alpha, adaptive_norm == "row"), atol=1e-12
        )


@pytest.mark.parametrize("adaptive_norm", ["none", "row"])
def test_adjacency_is_one_directional(adaptive_norm):
    rng = np.random.default_rng(1)
    for _ in range(100):
        n, f = int(rng.integers(1, 8)), int(rng.integers(1, 5))
        out = asggru.adjacency_from_embeddings(
            ad.constant(rng.normal(0, 5, (n, f))),
            ad.constant(rng.normal(0, 5, (n, f))),
            adaptive_norm=adaptive_norm,
        ).values
        np.testing.assert_array_equal(out * out.T, 0.0)
        np.testing.assert_array_equal(np.diag(out), 0.0)
        assert np.all(out >= 0)


def test_adjacency_row_norm_rows():
    rng = np.random.default_rng(2)
    out = asggru.adjacency_from_embeddings(
        ad.constant(rng.standard_normal((6, 3))), ad.constant(rng.standard_normal((6, 3)))
    ).values
    sums = out.sum(axis=1)
    assert np.all(np.isclose(sums, 1.0, atol=1e-12) | (sums == 0))


@pytest.mark.parametrize(
    "kwargs, expectation",
    [
        ({}, does_not_raise()),
        ({"alpha": 0.0}, pytest.raises(ConfigError, match="alpha must be > 0")),
        ({"adaptive_norm": "softmax"}, pytest.raises(ConfigError, match="adaptive_norm must be one of")),
    ],
)
def test_adjacency_argument_validation(kwargs, expectation):
    with expectation:
        asggru.adjacency_from_embeddings(ad.constant(np.ones((2, 1))), ad.constant(np.ones((2, 1))), **kwargs)


def test_adjacency_embedding_mismatch():
    with pytest.raises(ShapeError, match="embeddings have shapes"):
        asggru.adjacency_from_embeddings(ad.constant(np.ones((2, 1))), ad.constant(np.ones((3, 1))))


@pytest.mark.parametrize(
    "window_length, skip, expected",
    [
        (25, 4, [0, 4, 8, 12, 16, 20, 24]),
        (9, 4, [0, 4, 8]),
        (9, 8, [0, 8]),
        (10, 4, [1, 5, 9]),
        (1, 4, [0]),
        (3, 1, [0, 1, 2]),
    ],
)
def test_unroll_steps(window_length, skip, expected):
    assert asggru.unroll_steps(window_length, skip) == expected


@pytest.mark.parametrize("window_length, skip", [(4, 4), (4, 7)])
def test_unroll_steps_skip_too_large(window_length, skip):
    with pytest.raises(ConfigError, match="must be smaller than the window length"):
        asggru.unroll_steps(window_length, skip)


def test_unroll_visits_anchored_frames():
    rng = np.random.default_rng(3)
    _, p = make_params()
    frames = rng.standard_normal((9, 5, 1))
    records = asggru.unroll_states(list(frames), None, [random_adjacency(5, rng)], p, skip=4)
    assert [r.state.step_time for r in records] == [0, 4, 8]
    assert all(r.state.H.shape == (5, 3) for r in records)
    assert all(r.adaptive_adj.shape == (5, 5) for r in records)


def test_short_term_output_replaces_last_input():
    rng = np.random.default_rng(4)
    _, p = make_params()
    adj = [random_adjacency(5, rng)]
    frames = rng.standard_normal((9, 5, 1))
    replacement = rng.standard_normal((5, 1))
    swapped = frames.copy()
    swapped[-1] = replacement
    np.testing.assert_array_equal(
        asggru.unroll(list(frames), ad.constant(replacement), adj, p, skip=4).values,
        asggru.unroll(list(swapped), None, adj, p, skip=4).values,
    )


def test_frames_between_steps_are_skipped():
    rng = np.random.default_rng(5)
    _, p = make_params()
    adj = [random_adjacency(5, rng)]
    frames = rng.standard_normal((9, 5, 1))
    changed = frames.copy()
    changed[[1, 2, 3, 5, 6, 7]] += 10.0
    np.testing.assert_array_equal(
        asggru.unroll(list(frames), None, adj, p, skip=4).values,
        asggru.unroll(list(changed), None, adj, p, skip=4).values,
    )


def test_short_term_output_shape_checked():
    _, p = make_params()
    with pytest.raises(ShapeError, match="short-term output"):
        asggru.unroll_states([np.ones((4, 1))] * 5, ad.constant(np.ones((3, 1))), [np.eye(4)], p, skip=2)


@pytest.mark.parametrize("bias, expected", [(50.0, "previous"), (-50.0, "candidate")])
def test_update_gate_interpolates(bias, expected):
    """A saturated update gate keeps the previous state or takes the candidate."""
    rng = np.random.default_rng(6)
    _, p = make_params()
    p.gate_u.b.values[:] = bias
    x = rng.standard_normal((4, 1))
    h = rng.uniform(-0.5, 0.5, size=(4, 3))
    adj = [random_adjacency(4, rng)]
    adaptive = asggru.adaptive_adjacency(x, h, adj, p)
    state = asggru.gru_step(x, h, adj, adaptive, p, step_time=3)
    assert state.step_time == 3
    if expected == "previous":
        np.testing.assert_allclose(state.H.values, h, atol=1e-12)
    else:
        r = 1 / (1 + np.exp(-(_linear_gate(x, h, adj[0], adaptive.values, p.gate_r))))
        c = np.tanh(_linear_gate(x, r * h, adj[0], adaptive.values, p.gate_c))
        np.testing.assert_allclose(state.H.values, c, atol=1e-12)


def _linear_gate(x, h, adj, adaptive, gate):
    xh = np.hstack([x, h])
    out = np.zeros((x.shape[0], gate.b.cols)) + gate.b.values
    zp, zd = xh, xh
    for wp, wd in zip(gate.W_p, gate.W_d):
        zp, zd = adj @ zp, adaptive @ zd
        out += zp @ wp.values + zd @ wd.values
    return out


def test_gru_step_state_mismatch():
    _, p = make_params(hidden=3)
    with pytest.raises(ShapeError, match="hidden size 3"):
        asggru.gru_step(np.ones((4, 1)), np.zeros((4, 2)), [np.eye(4)], ad.constant(np.eye(4)), p)


@pytest.mark.parametrize("n_adjacencies", [0, 3])
def test_adjacency_count(n_adjacencies):
    _, p = make_params()
    with pytest.raises(ShapeError, match="one or two adjacency directions"):
        asggru.adaptive_adjacency(np.ones((4, 1)), np.zeros((4, 3)), [np.eye(4)] * n_adjacencies, p)


def test_directed_graph_needs_reverse_weights():
    _, p = make_params(directed=False)
    with pytest.raises(ShapeError, match="reverse weights"):
        asggru.adaptive_adjacency(np.ones((4, 1)), np.zeros((4, 3)), [np.eye(4), np.eye(4)], p)


def test_param_specs_are_node_independent():
    specs = asggru.param_specs(n_features=1, hidden=16, n_layers=3, directed=False)
    assert specs["asggru.gen1.theta_p.2"].shape == (17, 16)
    assert specs["asggru.gate_c.W_d.0"].shape == (17, 16)
    assert specs["asggru.head.W_fl"].shape == (16, 1)
    assert "asggru.gate_r.W_pb.0" in asggru.param_specs(1, 16, 3, directed=True)


@pytest.mark.parametrize("directed", [False, True])
def test_unroll_gradients(directed):
    rng = np.random.default_rng(7)
    params, p = make_params(hidden=2, n_layers=2, directed=directed)
    frames = list(rng.standard_normal((5, 4, 1)))
    adjacencies = [random_adjacency(4, rng) for _ in range(2 if directed else 1)]
    short = ad.parameter(rng.standard_normal((4, 1)), name="short")
    target = rng.standard_normal((4, 1))

    def fn():
        out = asggru.unroll(frames, short, adjacencies, p, skip=2)
        diff = ad.sub(out, ad.constant(target))
        return ad.sum_all(ad.hadamard(diff, diff))

    check = ad.check_gradients(fn, {**params, "short": short})
    assert check.passed, check.max_rel_error

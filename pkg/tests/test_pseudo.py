from contextlib import nullcontext as does_not_raise

import numpy as np
import pytest

from stkrig import pseudo
from stkrig.exceptions import ConfigError, DataError, ShapeError


def loop_k_idw(frame, known_mask, dist, k, rho):
    """Scalar-loop k-IDW: nearest known sensors, ties broken by lower index."""
    n, d = frame.shape
    out = frame.copy()
    known = [j for j in range(n) if known_mask[j]]
    for i in range(n):
        if known_mask[i]:
            continue
        ranked = sorted(known, key=lambda j: (dist[i, j], j))[:k]
        if dist[i, ranked[0]] == 0:
            out[i] = frame[ranked[0]]
            continue
        total = sum(dist[i, j] ** -rho for j in ranked)
        for c in range(d):
            out[i, c] = sum(dist[i, j] ** -rho * frame[j, c] for j in ranked) / total
    return out


def random_instance(rng):
    n = int(rng.integers(3, 10))
    coords = rng.uniform(size=(n, 2))
    dist = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
    known_mask = rng.uniform(size=n) < 0.6
    known_mask[rng.integers(n)] = True
    frame = rng.standard_normal((n, int(rng.integers(1, 3))))
    k = int(rng.integers(1, known_mask.sum() + 1))
    rho = float(rng.uniform(0.5, 3.0))
    return frame, known_mask, dist, k, rho


def test_matches_scalar_loop():
    rng = np.random.default_rng(0)
    for _ in range(200):
        frame, known_mask, dist, k, rho = random_instance(rng)
        out = pseudo.k_idw(frame, known_mask, dist, k=k, rho=rho)
        np.testing.assert_allclose(out.values, loop_k_idw(frame, known_mask, dist, k, rho), atol=1e-12)


def test_known_rows_pass_through():
    rng = np.random.default_rng(1)
    frame, known_mask, dist, k, rho = random_instance(rng)
    out = pseudo.k_idw(frame, known_mask, dist, k=k, rho=rho)
    np.testing.assert_array_equal(out.values[known_mask], frame[known_mask])
    np.testing.assert_array_equal(out.source_mask, known_mask)


def test_weights_are_row_stochastic_and_sparse():
    rng = np.random.default_rng(2)
    for _ in range(100):
        _, known_mask, dist, k, rho = random_instance(rng)
        weights = pseudo.idw_weights(dist, known_mask, k=k, rho=rho)
        assert weights.shape == ((~known_mask).sum(), known_mask.sum())
        if weights.size:
            np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
            assert np.all((weights > 0).sum(axis=1) <= k)


def test_unknown_readings_are_never_read():
    rng = np.random.default_rng(3)
    frame, known_mask, dist, k, rho = random_instance(rng)
    corrupted = frame.copy()
    corrupted[~known_mask] = 1e9
    np.testing.assert_array_equal(
        pseudo.k_idw(frame, known_mask, dist, k, rho).values,
        pseudo.k_idw(corrupted, known_mask, dist, k, rho).values,
    )


def test_colocated_sensor_takes_all_weight():
    dist = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    frame = np.array([[0.0], [7.0], [1.0]])
    out = pseudo.k_idw(frame, [False, True, True], dist, k=2)
    assert out.values[0, 0] == 7.0


def test_tie_broken_by_lower_index():
    dist = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 2.0], [1.0, 2.0, 0.0]])
    frame = np.array([[0.0], [3.0], [5.0]])
    out = pseudo.k_idw(frame, [False, True, True], dist, k=1)
    assert out.values[0, 0] == 3.0


def test_all_known_is_identity():
    frame = np.arange(6.0).reshape(3, 2)
    dist = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_array_equal(pseudo.k_idw(frame, [True] * 3, dist, k=1).values, frame)


@pytest.mark.parametrize(
    "k, rho, expectation",
    [
        (2, 1.0, does_not_raise()),
        (3, 1.0, pytest.raises(DataError, match="at least k=3 known sensors")),
        (0, 1.0, pytest.raises(ConfigError, match="k must be >= 1")),
        (1, 0.0, pytest.raises(ConfigError, match="rho must be > 0")),
    ],
)
def test_argument_validation(k, rho, expectation):
    dist = np.ones((3, 3)) - np.eye(3)
    with expectation:
        pseudo.idw_weights(dist, [False, True, True], k=k, rho=rho)


def test_mask_length_mismatch():
    with pytest.raises(ShapeError, match="one entry per node"):
        pseudo.k_idw(np.ones((3, 1)), [True, False], np.zeros((3, 3)))


def test_frames_share_weights():
    rng = np.random.default_rng(4)
    frame, known_mask, dist, k, rho = random_instance(rng)
    frames = np.stack([frame, 2 * frame, frame - 1])
    filled = pseudo.k_idw_frames(frames, known_mask, dist, k=k, rho=rho)
    for t in range(3):
        np.testing.assert_allclose(
            filled[t], pseudo.k_idw(frames[t], known_mask, dist, k, rho).values, atol=1e-12
        )


def test_frames_must_be_three_dimensional():
    with pytest.raises(ShapeError, match=r"\(T, N, D\)"):
        pseudo.k_idw_frames(np.ones((3, 2)), [True, True, False], np.zeros((3, 3)))

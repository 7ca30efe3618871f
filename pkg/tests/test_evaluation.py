import numpy as np
import pytest

from stkrig import evaluation
from stkrig.exceptions import ConfigError, DataError, NumericalError, ShapeError
from stkrig.model import ModelConfig, init_params


def loop_mse(pred, truth):
    return sum((p - t) ** 2 for p, t in zip(pred, truth)) / len(truth)


class TestMetrics:
    def test_rmse_bounds_mae(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 50))
            report = evaluation.metrics(rng.standard_normal(n), rng.standard_normal(n))
            assert report.rmse >= report.mae - 1e-12
            assert report.n_points == n

    def test_squared_rmse_matches_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 30))
            pred, truth = rng.standard_normal(n), rng.standard_normal(n)
            report = evaluation.metrics(pred, truth)
            assert report.rmse**2 == pytest.approx(loop_mse(pred, truth), rel=1e-12)

    def test_perfect_prediction(self):
        truth = np.arange(5.0)
        report = evaluation.metrics(truth, truth)
        assert (report.mae, report.rmse, report.r2) == (0.0, 0.0, 1.0)

    def test_constant_truth_has_no_r2(self):
        assert evaluation.metrics([1.0, 2.0], [3.0, 3.0]).r2 is None

    def test_mask_excludes_entries(self):
        report = evaluation.metrics([1.0, 2.0, 100.0], [1.0, 3.0, 0.0], mask=[True, True, False])
        assert report.n_points == 2
        assert report.mae == pytest.approx(0.5)

    def test_per_sensor_breakdown(self):
        truth = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        pred = truth + np.array([[0.0, 1.0], [0.0, -1.0], [0.0, 1.0]])
        report = evaluation.metrics(pred, truth, node_ids=["a", "b"])
        assert [s.node_id for s in report.per_sensor] == ["a", "b"]
        assert report.per_sensor[0].mae == 0.0
        assert report.per_sensor[1].rmse == 1.0
        assert report.per_sensor[1].r2 is None
        frame = report.per_sensor_frame()
        assert list(frame.columns) == ["node_id", "mae", "rmse", "r2", "n_points"]

    def test_fully_masked_sensor_is_skipped(self):
        truth = np.ones((3, 2))
        mask = np.array([[True, False]] * 3)
        report = evaluation.metrics(truth, truth, mask=mask)
        assert [s.node_id for s in report.per_sensor] == ["0"]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match=r"pred \(3,\), truth \(2,\)"):
            evaluation.metrics([1.0, 2.0, 3.0], [1.0, 2.0])

    def test_too_few_points(self):
        with pytest.raises(DataError, match="at least two scored entries, got 1"):
            evaluation.metrics([1.0, 2.0], [1.0, 2.0], mask=[True, False])

    def test_node_id_count(self):
        with pytest.raises(ShapeError, match="Expected 2 node ids, got 1"):
            evaluation.metrics(np.ones((2, 2)), np.ones((2, 2)), node_ids=["a"])

    def test_to_dict(self):
        report = evaluation.metrics(np.ones((2, 1)), np.zeros((2, 1)), node_ids=["s"])
        out = report.to_dict()
        assert out["mae"] == 1.0
        assert out["per_sensor"][0]["node_id"] == "s"
        assert "short_term" not in out


class TestBaselines:
    def test_knn_single_neighbor_copies_nearest(self, small_dataset):
        train, test = small_dataset.sensor_split
        report = evaluation.baseline_knn(small_dataset, k=1)
        span = small_dataset.splits.test
        nearest = train[np.argmin(small_dataset.graph.dist[np.ix_(test, train)], axis=1)]
        pred = small_dataset.readings[span.start : span.stop][:, nearest]
        truth = small_dataset.readings[span.start : span.stop][:, test]
        assert report.mae == pytest.approx(np.abs(pred - truth).mean())
        assert report.n_points == span.length * test.size

    def test_knn_all_neighbors_is_mean(self, small_dataset):
        train, test = small_dataset.sensor_split
        report = evaluation.baseline_knn(small_dataset, k=train.size)
        span = small_dataset.splits.test
        values = small_dataset.readings[span.start : span.stop]
        pred = np.repeat(values[:, train].mean(axis=1, keepdims=True), test.size, axis=1)
        assert report.rmse == pytest.approx(np.sqrt(np.mean((pred - values[:, test]) ** 2)))

    def test_knn_k_too_large(self, small_dataset):
        with pytest.raises(ConfigError, match="k=7 exceeds the 6 training sensors"):
            evaluation.baseline_knn(small_dataset, k=7)

    def test_idw_matches_loop(self, small_dataset):
        train, test = small_dataset.sensor_split
        span = small_dataset.splits.test
        values = small_dataset.readings[span.start : span.stop]
        dist = small_dataset.graph.dist
        pred = np.zeros((span.length, test.size))
        for a, i in enumerate(test):
            w = np.array([dist[i, j] ** -2.0 for j in train])
            pred[:, a] = values[:, train] @ (w / w.sum())
        report = evaluation.baseline_idw(small_dataset, rho=2.0)
        assert report.mae == pytest.approx(np.abs(pred - values[:, test]).mean())

    def test_window_length_aligns_scored_frames(self, small_dataset):
        full = evaluation.baseline_idw(small_dataset)
        aligned = evaluation.baseline_idw(small_dataset, window_length=9)
        n_test = small_dataset.sensor_split.test.size
        assert full.n_points - aligned.n_points == 8 * n_test

    def test_split_shorter_than_window(self, small_dataset):
        with pytest.raises(DataError, match="shorter than the window length 25"):
            evaluation.baseline_knn(small_dataset, window_length=25)


class TestModelEvaluation:
    @pytest.fixture
    def config(self):
        return ModelConfig(T=9, T_s=2, T_k=4, k=3, hidden=4, n_layers=2)

    def test_predict_shapes(self, small_dataset, config):
        preds = evaluation.predict(small_dataset, init_params(config, seed=0), config)
        test = small_dataset.splits.test
        assert preds.long.shape == preds.short.shape == (test.length - 8, 12, 1)
        np.testing.assert_array_equal(preds.target_index, np.arange(test.start + 8, test.stop))

    def test_evaluate_full_model(self, small_dataset, config):
        report = evaluation.evaluate_model(small_dataset, init_params(config, seed=0), config)
        n_test = small_dataset.sensor_split.test.size
        assert report.n_points == 12 * n_test
        assert len(report.per_sensor) == n_test
        assert report.short_term is not None
        assert report.short_term.n_points == report.n_points
        assert report.rmse >= report.mae

    def test_evaluation_matches_baseline_alignment(self, small_dataset, config):
        report = evaluation.evaluate_model(small_dataset, init_params(config, seed=0), config)
        baseline = evaluation.baseline_knn(small_dataset, k=3, window_length=config.T)
        assert report.n_points == baseline.n_points
        assert [s.node_id for s in report.per_sensor] == [s.node_id for s in baseline.per_sensor]

    def test_single_head_has_no_nested_report(self, small_dataset, config):
        config.set_params(variant="long_only")
        report = evaluation.evaluate_model(small_dataset, init_params(config, seed=0), config)
        assert report.short_term is None

    def test_needs_an_unknown_sensor(self, small_dataset, config):
        with pytest.raises(DataError, match="at least one unknown sensor"):
            evaluation.evaluate_model(
                small_dataset, init_params(config, seed=0), config, known_mask=[True] * 12
            )

    @pytest.mark.parametrize("name", ["asggru.head.W_fl", "jstgat.head.W_fs"])
    def test_non_finite_predictions(self, small_dataset, config, name):
        params = init_params(config, seed=0)
        params[name].values[:] = np.nan
        with pytest.raises(NumericalError, match=r"predictions at time \d+ contain Nans"):
            evaluation.evaluate_model(small_dataset, params, config)

    def test_custom_known_mask(self, small_dataset, config):
        mask = np.ones(12, dtype=bool)
        mask[[0, 5]] = False
        report = evaluation.evaluate_model(
            small_dataset, init_params(config, seed=0), config, split="val", stride=8, known_mask=mask
        )
        assert [s.node_id for s in report.per_sensor] == ["s000", "s005"]


def test_summarize_reports():
    reports = [evaluation.EvalReport(1.0, 2.0, 0.5, 10), evaluation.EvalReport(3.0, 4.0, None, 10)]
    summary = evaluation.summarize_reports(reports)
    assert summary["mae"] == {"mean": 2.0, "std": 1.0}
    assert summary["rmse"]["mean"] == 3.0
    assert summary["r2"] == {"mean": 0.5, "std": 0.0}


def test_summarize_all_r2_missing():
    summary = evaluation.summarize_reports([evaluation.EvalReport(1.0, 1.0, None, 2)])
    assert summary["r2"] == {"mean": None, "std": None}


def test_summarize_nothing():
    with pytest.raises(DataError, match="No reports"):
        evaluation.summarize_reports([])

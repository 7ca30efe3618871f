"""Metrics, classical interpolation baselines and model evaluation."""

from __future__ import annotations

import logging
import os
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from . import validation
from .data import Dataset, TimeSplit, make_windows
from .exceptions import ConfigError, DataError, ShapeError
from .model import ModelConfig, ModelParams, forward
from .pseudo import idw_weights

__all__ = [
    "SensorMetrics",
    "EvalReport",
    "Predictions",
    "metrics",
    "baseline_knn",
    "baseline_idw",
    "predict",
    "evaluate_model",
    "summarize_reports",
]

logger = logging.getLogger(__name__)


def __dir__() -> list[str]:
    return __all__


class SensorMetrics(NamedTuple):
    node_id: str
    mae: float
    rmse: float
    r2: Optional[float]
    n_points: int


class EvalReport(NamedTuple):
    """Error metrics of an interpolation.

    Attributes
    ----------
    mae, rmse :
        Mean absolute and root mean squared error.
    r2 :
        Coefficient of determination; None when the truth is constant.
    n_points :
        Number of scored readings.
    per_sensor :
        Metrics of every scored sensor.
    short_term :
        Report of the short-term output, when the model produced one next to the
        long-term output.
    """

    mae: float
    rmse: float
    r2: Optional[float]
    n_points: int
    per_sensor: List[SensorMetrics] = []
    short_term: Optional["EvalReport"] = None

    def to_dict(self) -> dict:
        out = {
            "mae": self.mae,
            "rmse": self.rmse,
            "r2": self.r2,
            "n_points": self.n_points,
            "per_sensor": [s._asdict() for s in self.per_sensor],
        }
        if self.short_term is not None:
            out["short_term"] = self.short_term.to_dict()
        return out

    def per_sensor_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s._asdict() for s in self.per_sensor], columns=SensorMetrics._fields)

    def write_per_sensor(self, path: Union[str, os.PathLike]):
        self.per_sensor_frame().to_csv(path, index=False)


class Predictions(NamedTuple):
    """Raw-scale predictions of one split.

    Attributes
    ----------
    target_index :
        Dataset time index of every window's target frame.
    long, short :
        ``W x N x D`` predictions for all nodes; None when the variant lacks the head.
    """

    target_index: NDArray
    long: Optional[NDArray]
    short: Optional[NDArray]

    @property
    def prediction(self) -> NDArray:
        return self.long if self.long is not None else self.short


def _scores(error: NDArray, truth: NDArray):
    mae = float(np.mean(np.abs(error)))
    rmse = float(np.sqrt(np.mean(error * error)))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(error * error)) / ss_tot
    return mae, rmse, r2


def metrics(
    pred: ArrayLike,
    truth: ArrayLike,
    mask: Optional[ArrayLike] = None,
    node_ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    """
    MAE, RMSE and R² of ``pred`` against ``truth``.

    Parameters
    ----------
    pred, truth :
        Vectors, or ``time x sensors`` matrices when a per-sensor breakdown is wanted.
    mask :
        True for entries to score; defaults to all.
    node_ids :
        Labels of the columns for the per-sensor breakdown.

    Raises
    ------
    ShapeError
        If the shapes differ.
    DataError
        If fewer than two entries are scored.

    Examples
    --------
    >>> report = metrics([1.0, 2.0, 5.0], [1.0, 2.0, 3.0])
    >>> round(report.mae, 6), round(report.rmse ** 2, 6), report.r2
    (0.666667, 1.333333, -1.0)
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    validation.check_same_shape(pred, truth, names=("pred", "truth"), op="metrics")
    mask = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    validation.check_same_shape(mask, truth, names=("mask", "truth"), op="metrics")
    n_points = int(mask.sum())
    if n_points < 2:
        raise DataError(f"metrics need at least two scored entries, got {n_points}.")
    error = pred[mask] - truth[mask]
    mae, rmse, r2 = _scores(error, truth[mask])

    per_sensor = []
    if truth.ndim == 2:
        ids = node_ids if node_ids is not None else [str(i) for i in range(truth.shape[1])]
        if len(ids) != truth.shape[1]:
            raise ShapeError(f"Expected {truth.shape[1]} node ids, got {len(ids)}.")
        for j, node in enumerate(ids):
            col = mask[:, j]
            if not col.any():
                continue
            s_mae, s_rmse, s_r2 = _scores(pred[col, j] - truth[col, j], truth[col, j])
            per_sensor.append(SensorMetrics(str(node), s_mae, s_rmse, s_r2, int(col.sum())))
    return EvalReport(mae, rmse, r2, n_points, per_sensor)


def _scored_range(dataset: Dataset, split: Union[str, TimeSplit], window_length: int) -> TimeSplit:
    span = dataset.split_range(split)
    window_length = validation.check_integer(window_length, "window_length", minimum=1)
    if span.length < window_length:
        raise DataError(
            f"Split of length {span.length} is shorter than the window length {window_length}."
        )
    return TimeSplit(span.start + window_length - 1, span.stop)


def _score_test_sensors(dataset: Dataset, span: TimeSplit, pred: NDArray) -> EvalReport:
    test = dataset.sensor_split.test
    truth = dataset.readings[span.start : span.stop][:, test]
    observed = ~dataset.missing_mask[span.start : span.stop][:, test]
    return metrics(pred, truth, observed, [dataset.node_ids[i] for i in test])


def baseline_knn(
    dataset: Dataset, k: int = 5, split: Union[str, TimeSplit] = "test", window_length: int = 1
) -> EvalReport:
    """
    Predict every testing sensor as the plain mean of its ``k`` nearest training sensors.

    Parameters
    ----------
    dataset :
        Dataset with its sensor split.
    k :
        Number of neighbors.
    split :
        Time range to score.
    window_length :
        Skip the first ``window_length - 1`` frames so the scored frames match the
        targets of model windows of that length.

    Raises
    ------
    ConfigError
        If ``k`` exceeds the number of training sensors.
    """
    train, test = dataset.sensor_split
    k = validation.check_integer(k, "k", minimum=1)
    if k > train.size:
        raise ConfigError(f"k={k} exceeds the {train.size} training sensors.")
    if test.size == 0:
        raise DataError("The sensor split holds no testing sensor.")
    span = _scored_range(dataset, split, window_length)
    d = dataset.graph.dist[np.ix_(test, train)]
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    weights = np.zeros_like(d)
    np.put_along_axis(weights, nearest, 1.0 / k, axis=1)
    pred = dataset.readings[span.start : span.stop][:, train] @ weights.T
    return _score_test_sensors(dataset, span, pred)


def baseline_idw(
    dataset: Dataset,
    rho: float = 1.0,
    split: Union[str, TimeSplit] = "test",
    window_length: int = 1,
) -> EvalReport:
    """
    Inverse distance weighting of every testing sensor over all training sensors.

    Equivalent to k-IDW with ``k`` equal to the number of training sensors.
    """
    train, test = dataset.sensor_split
    if test.size == 0:
        raise DataError("The sensor split holds no testing sensor.")
    span = _scored_range(dataset, split, window_length)
    weights = idw_weights(dataset.graph.dist, dataset.known_mask, k=train.size, rho=rho)
    pred = dataset.readings[span.start : span.stop][:, train] @ weights.T
    return _score_test_sensors(dataset, span, pred)


def predict(
    dataset: Dataset,
    params: ModelParams,
    config: ModelConfig,
    split: Union[str, TimeSplit] = "test",
    stride: int = 1,
    known_mask: Optional[ArrayLike] = None,
) -> Predictions:
    """
    Slide windows over a split and collect raw-scale predictions for all nodes.

    ``known_mask`` defaults to the training sensors of the dataset.

    Raises
    ------
    NumericalError
        If a window yields NaN or infinite predictions.
    """
    longs, shorts, targets = [], [], []
    for window in make_windows(dataset, split, config.T, stride=stride, known_mask=known_mask):
        result = forward(window, dataset.graph, params, config)
        validation.error_invalid_entry(
            *(r.values for r in (result.long, result.short) if r is not None),
            what=f"predictions at time {window.target_index}",
        )
        targets.append(window.target_index)
        if result.long is not None:
            longs.append(dataset.scaler.inverse_transform(result.long.values))
        if result.short is not None:
            shorts.append(dataset.scaler.inverse_transform(result.short.values))
    return Predictions(
        np.asarray(targets, dtype=int),
        np.stack(longs) if longs else None,
        np.stack(shorts) if shorts else None,
    )


def _score_predictions(
    dataset: Dataset, targets: NDArray, pred: NDArray, unknown: NDArray
) -> EvalReport:
    truth = dataset.readings[targets][:, unknown]
    observed = ~dataset.missing_mask[targets][:, unknown]
    return metrics(pred[:, unknown, 0], truth, observed, [dataset.node_ids[i] for i in unknown])


def evaluate_model(
    dataset: Dataset,
    params: ModelParams,
    config: ModelConfig,
    split: Union[str, TimeSplit] = "test",
    stride: int = 1,
    known_mask: Optional[ArrayLike] = None,
) -> EvalReport:
    """
    Infer the unknown sensors over a split and score the model on raw scale.

    By default the training sensors are known and the testing sensors are scored.
    The report holds the long-term metrics, with the short-term ones nested in
    ``short_term``; single-head variants report their only head.
    """
    known_mask = dataset.known_mask if known_mask is None else known_mask
    known_mask = validation.check_mask(known_mask, dataset.n_nodes)
    unknown = np.flatnonzero(~known_mask)
    if unknown.size == 0:
        raise DataError("Evaluation needs at least one unknown sensor.")
    preds = predict(dataset, params, config, split=split, stride=stride, known_mask=known_mask)
    report = _score_predictions(dataset, preds.target_index, preds.prediction, unknown)
    if preds.long is not None and preds.short is not None:
        short = _score_predictions(dataset, preds.target_index, preds.short, unknown)
        report = report._replace(short_term=short)
    logger.debug("Evaluated %d windows: MAE %.4f RMSE %.4f", len(preds.target_index), report.mae, report.rmse)
    return report


def summarize_reports(reports: Sequence[EvalReport]) -> Dict[str, Dict[str, Optional[float]]]:
    """Mean and standard deviation of MAE, RMSE and R² over independent runs."""
    if not reports:
        raise DataError("No reports to summarize.")
    summary = {}
    for field in ("mae", "rmse", "r2"):
        values = [getattr(r, field) for r in reports if getattr(r, field) is not None]
        summary[field] = {
            "mean": float(np.mean(values)) if values else None,
            "std": float(np.std(values)) if values else None,
        }
    return summary

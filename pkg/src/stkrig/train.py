"""
Inductive training: random subgraphs, sensor masking, dual L2 loss and Adam.

Every optimizer step draws windows from the training time range on a random subgraph
of the training sensors, hides a fraction of the subgraph nodes and reconstructs all
node readings of the target frame with both heads.
"""

from __future__ import annotations

import logging
import math
import os
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from . import autodiff as ad
from . import validation
from .base_class import Base
from .data import Dataset, ReadingWindow
from .evaluation import EvalReport, evaluate_model
from .exceptions import DataError, NumericalError, ShapeError
from .graph import SensorGraph, SubgraphSample
from .model import Checkpoint, ModelConfig, ModelParams, forward, init_params
from .solvers import Adam, AdamState

__all__ = [
    "TrainConfig",
    "HistoryRecord",
    "TrainState",
    "TrainResult",
    "sample_training_instance",
    "mse",
    "loss",
    "Trainer",
    "train",
    "write_history",
]

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_mae", "val_rmse", "val_r2")


def __dir__() -> list[str]:
    return __all__


class TrainConfig(Base):
    """
    Optimization settings.

    Parameters
    ----------
    lr :
        Adam learning rate.
    beta1, beta2, eps :
        Adam moment decay rates and stabilizer.
    epochs :
        Number of epochs.
    steps_per_epoch :
        Optimizer steps per epoch.
    batch :
        Windows per optimizer step.
    mask_fraction :
        Fraction of subgraph nodes hidden at every step, in ``(0, 1)``.
    subgraph_min_fraction :
        Smallest subgraph, as a fraction of the training sensors, in ``(0, 1]``.
    seed :
        Seed of the parameter initialization and of the sampling stream.
    clip_norm :
        Global gradient norm bound; None disables clipping.
    val_stride :
        Step between validation windows.
    val_seed :
        Seed choosing the training sensors hidden during validation.
    """

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        epochs: int = 30,
        steps_per_epoch: int = 50,
        batch: int = 1,
        mask_fraction: float = 0.5,
        subgraph_min_fraction: float = 0.7,
        seed: int = 0,
        clip_norm: Optional[float] = None,
        val_stride: int = 5,
        val_seed: int = 0,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch = batch
        self.mask_fraction = mask_fraction
        self.subgraph_min_fraction = subgraph_min_fraction
        self.seed = seed
        self.clip_norm = clip_norm
        self.val_stride = val_stride
        self.val_seed = val_seed

    @property
    def lr(self) -> float:
        return self._lr

    @lr.setter
    def lr(self, value: float):
        self._lr = validation.check_positive(value, "lr")

    @property
    def epochs(self) -> int:
        return self._epochs

    @epochs.setter
    def epochs(self, value: int):
        self._epochs = validation.check_integer(value, "epochs", minimum=0)

    @property
    def steps_per_epoch(self) -> int:
        return self._steps_per_epoch

    @steps_per_epoch.setter
    def steps_per_epoch(self, value: int):
        self._steps_per_epoch = validation.check_integer(value, "steps_per_epoch", minimum=1)

    @property
    def batch(self) -> int:
        return self._batch

    @batch.setter
    def batch(self, value: int):
        self._batch = validation.check_integer(value, "batch", minimum=1)

    @property
    def mask_fraction(self) -> float:
        return self._mask_fraction

    @mask_fraction.setter
    def mask_fraction(self, value: float):
        self._mask_fraction = validation.check_fraction(value, "mask_fraction")

    @property
    def subgraph_min_fraction(self) -> float:
        return self._subgraph_min_fraction

    @subgraph_min_fraction.setter
    def subgraph_min_fraction(self, value: float):
        self._subgraph_min_fraction = validation.check_fraction(
            value, "subgraph_min_fraction", closed_right=True
        )

    @property
    def seed(self) -> int:
        return self._seed

    @seed.setter
    def seed(self, value: int):
        self._seed = validation.check_integer(value, "seed")

    @property
    def val_stride(self) -> int:
        return self._val_stride

    @val_stride.setter
    def val_stride(self, value: int):
        self._val_stride = validation.check_integer(value, "val_stride", minimum=1)

    def solver(self) -> Adam:
        return Adam(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            clip_norm=self.clip_norm,
        )


class HistoryRecord(NamedTuple):
    epoch: int
    train_loss: float
    val_mae: Optional[float]
    val_rmse: Optional[float]
    val_r2: Optional[float]


class TrainState(NamedTuple):
    """
    Everything needed to continue a training run.

    Attributes
    ----------
    params :
        Current parameters.
    opt_state :
        Adam moments and step counter.
    rng :
        Sampling stream.
    epoch :
        Completed epochs.
    best_params :
        Copy of the parameters with the lowest validation MAE so far.
    best_val_mae :
        That MAE, or ``inf`` before the first validation.
    history :
        One record per completed epoch.
    """

    params: ModelParams
    opt_state: AdamState
    rng: np.random.Generator
    epoch: int = 0
    best_params: Optional[ModelParams] = None
    best_val_mae: float = math.inf
    history: Tuple[HistoryRecord, ...] = ()


class TrainResult(NamedTuple):
    params: ModelParams
    history: List[HistoryRecord]
    state: TrainState


def sample_training_instance(
    dataset: Dataset,
    graph: SensorGraph,
    config: TrainConfig,
    rng: np.random.Generator,
    window_length: int,
) -> Tuple[SubgraphSample, ReadingWindow]:
    """
    Draw a random window on a random subgraph of the training sensors.

    The window start is uniform over the training range. The subgraph holds between
    ``ceil(subgraph_min_fraction * N_train)`` and ``N_train`` training sensors, of
    which ``ceil(mask_fraction * n)`` are marked unknown (at least one node stays
    known).

    Parameters
    ----------
    dataset :
        Dataset providing the readings and the sensor split.
    graph :
        Graph over all dataset nodes; restricted and re-normalized on the subgraph.
    config :
        Sampling fractions.
    rng :
        Random stream.
    window_length :
        Frames per window.

    Raises
    ------
    DataError
        If the training range is shorter than the window or fewer than two
        training sensors exist.
    """
    span = dataset.splits.train
    if span.length < window_length:
        raise DataError(
            f"Training range of length {span.length} is shorter than the window length {window_length}."
        )
    if graph.n_nodes != dataset.n_nodes:
        raise ShapeError(
            f"Graph has {graph.n_nodes} nodes but the dataset has {dataset.n_nodes} sensors."
        )
    train_nodes = dataset.sensor_split.train
    n_train = train_nodes.size
    if n_train < 2:
        raise DataError(f"Training needs at least two training sensors, got {n_train}.")

    start = int(rng.integers(span.start, span.stop - window_length + 1))
    n_min = max(2, math.ceil(config.subgraph_min_fraction * n_train - 1e-9))
    size = int(rng.integers(min(n_min, n_train), n_train + 1))
    nodes = np.sort(rng.choice(train_nodes, size=size, replace=False))
    n_unknown = min(max(math.ceil(config.mask_fraction * size - 1e-9), 1), size - 1)
    known_mask = np.ones(size, dtype=bool)
    known_mask[rng.choice(size, size=n_unknown, replace=False)] = False

    stop = start + window_length
    window = ReadingWindow(
        frames=dataset.normalized[start:stop][:, nodes, None],
        known_mask=known_mask,
        target_index=stop - 1,
        missing_mask=dataset.missing_mask[start:stop][:, nodes],
    )
    return SubgraphSample(nodes, known_mask, graph.restrict(nodes)), window


def mse(
    pred: ad.DiffMatrix, target: ArrayLike, missing_mask: Optional[ArrayLike] = None
) -> ad.DiffMatrix:
    """
    Mean squared error over the observed entries of ``target``.

    Raises
    ------
    ShapeError
        If the shapes differ.
    DataError
        If every entry is missing.
    """
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[:, None]
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} and target {target.shape} differ.")
    diff = ad.sub(pred, ad.constant(target))
    squared = ad.hadamard(diff, diff)
    count = target.size
    if missing_mask is not None:
        observed = ~np.asarray(missing_mask, dtype=bool).reshape(target.shape[0], -1)
        observed = np.broadcast_to(observed, target.shape).astype(float)
        count = int(observed.sum())
        squared = ad.hadamard(squared, ad.constant(observed))
    if count == 0:
        raise DataError("loss: every target reading is missing.")
    return ad.scale(ad.sum_all(squared), 1.0 / count)


def loss(
    short: Optional[ad.DiffMatrix],
    long: Optional[ad.DiffMatrix],
    target_frame: ArrayLike,
    missing_mask: Optional[ArrayLike] = None,
) -> ad.DiffMatrix:
    """
    Equal-weight sum of the short-term and long-term MSE over all nodes.

    A head that is None (single-head variants) contributes nothing.

    Examples
    --------
    >>> import numpy as np
    >>> from stkrig import autodiff as ad
    >>> target = np.zeros((3, 1))
    >>> loss(ad.constant(target), ad.constant(target + 1), target).item()
    1.0
    """
    terms = [mse(p, target_frame, missing_mask) for p in (short, long) if p is not None]
    if not terms:
        raise ShapeError("loss: at least one of the short-term and long-term outputs is required.")
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total


class Trainer:
    """
    Training loop with best-validation checkpoint selection.

    Parameters
    ----------
    model_config :
        Model hyperparameters.
    train_config :
        Optimization settings.

    Examples
    --------
    >>> from stkrig.simulation import synth_generate
    >>> dataset = synth_generate(12, 200, seed=0)
    >>> trainer = Trainer(ModelConfig(T=5, T_s=2, T_k=2, hidden=4, n_layers=1),
    ...                   TrainConfig(epochs=1, steps_per_epoch=2, val_stride=20))
    >>> result = trainer.fit(dataset)
    >>> len(result.history)
    1
    """

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig):
        self.model_config = model_config.validate()
        self.train_config = train_config
        self.solver = train_config.solver()

    def initialize_state(
        self, params: Optional[ModelParams] = None, checkpoint: Optional[Checkpoint] = None
    ) -> TrainState:
        """
        Fresh state, or the state stored in ``checkpoint`` for resuming.

        A checkpoint without Adam moments or random state restarts both. Without best
        parameters, the stored parameters stand in for them.
        """
        rng = np.random.default_rng(self.train_config.seed)
        if checkpoint is not None:
            params = checkpoint.params.copy()
            metadata = checkpoint.metadata or {}
            if checkpoint.rng_state is not None:
                rng.bit_generator.state = checkpoint.rng_state
            opt_state = checkpoint.optimizer_state or self.solver.init_state(params)
            best = checkpoint.best_params if checkpoint.best_params is not None else params
            return TrainState(
                params=params,
                opt_state=opt_state,
                rng=rng,
                epoch=int(metadata.get("epoch", 0)),
                best_params=best.copy(),
                best_val_mae=_as_mae(metadata.get("best_val_mae")),
                history=tuple(HistoryRecord(*r) for r in metadata.get("history", [])),
            )
        if params is None:
            params = init_params(self.model_config, seed=self.train_config.seed)
        params.check_compatible(self.model_config)
        return TrainState(params, self.solver.init_state(params), rng, best_params=params.copy())

    def update(
        self, state: TrainState, dataset: Dataset, graph: Optional[SensorGraph] = None
    ) -> Tuple[TrainState, float]:
        """
        One optimizer step on ``batch`` freshly sampled instances.

        ``graph`` describes the dataset nodes and defaults to ``dataset.graph``.

        Returns
        -------
        :
            The new state and the mean loss of the step.

        Raises
        ------
        NumericalError
            If the loss is not finite.
        """
        graph = dataset.graph if graph is None else graph
        params = state.params
        ad.zero_grad(params)
        with ad.Tape() as tape:
            total = None
            for _ in range(self.train_config.batch):
                sample, window = sample_training_instance(
                    dataset, graph, self.train_config, state.rng, self.model_config.T
                )
                result = forward(window, sample.graph, params, self.model_config)
                term = loss(result.short, result.long, window.target_frame, window.missing_mask[-1])
                total = term if total is None else ad.add(total, term)
            total = ad.scale(total, 1.0 / self.train_config.batch)
            value = total.item()
            if not np.isfinite(value):
                raise NumericalError(f"Training loss became {value} at step {state.opt_state.step + 1}.")
            tape.backward(total)
        opt_state = self.solver.update(params, state.opt_state)
        return state._replace(opt_state=opt_state), value

    def validation_mask(self, dataset: Dataset) -> NDArray:
        """Training sensors known during validation: a seeded half of them is hidden."""
        train_nodes = dataset.sensor_split.train
        rng = np.random.default_rng(self.train_config.val_seed)
        hidden = rng.choice(train_nodes.size, size=train_nodes.size // 2, replace=False)
        known = np.ones(train_nodes.size, dtype=bool)
        known[hidden] = False
        return known

    def validate(self, state: TrainState, dataset: Dataset) -> Optional[EvalReport]:
        """Metrics on the validation range, inferring hidden training sensors from the rest."""
        train_nodes = dataset.sensor_split.train
        if train_nodes.size < 2 or dataset.splits.val.length < self.model_config.T:
            return None
        restricted = dataset.restrict_nodes(train_nodes)
        return evaluate_model(
            restricted,
            state.params,
            self.model_config,
            split=dataset.splits.val,
            stride=self.train_config.val_stride,
            known_mask=self.validation_mask(dataset),
        )

    def run_epoch(
        self, state: TrainState, dataset: Dataset, graph: Optional[SensorGraph] = None
    ) -> TrainState:
        losses = []
        for _ in range(self.train_config.steps_per_epoch):
            state, value = self.update(state, dataset, graph)
            losses.append(value)
        report = self.validate(state, dataset)
        epoch = state.epoch + 1
        record = HistoryRecord(
            epoch,
            float(np.mean(losses)),
            None if report is None else report.mae,
            None if report is None else report.rmse,
            None if report is None else report.r2,
        )
        logger.info(
            "epoch %d: train loss %.6f, val MAE %s, val RMSE %s, val R2 %s",
            epoch,
            record.train_loss,
            _fmt(record.val_mae),
            _fmt(record.val_rmse),
            _fmt(record.val_r2),
        )
        best_params, best_val_mae = state.best_params, state.best_val_mae
        if report is None or report.mae < best_val_mae:
            best_params = state.params.copy()
            best_val_mae = best_val_mae if report is None else report.mae
        return state._replace(
            epoch=epoch,
            best_params=best_params,
            best_val_mae=best_val_mae,
            history=state.history + (record,),
        )

    def fit(
        self,
        dataset: Dataset,
        params: Optional[ModelParams] = None,
        state: Optional[TrainState] = None,
        graph: Optional[SensorGraph] = None,
    ) -> TrainResult:
        """
        Train until ``epochs`` epochs are completed.

        Parameters
        ----------
        dataset :
            Training data.
        params :
            Initial parameters; drawn from the seed when omitted.
        state :
            State to resume from, e.g. from :meth:`initialize_state` with a checkpoint.
        graph :
            Graph over the dataset nodes used for sampling; defaults to ``dataset.graph``.

        Returns
        -------
        :
            The parameters with the best validation MAE (the initial ones when no
            epoch ran), the history and the final state.
        """
        state = self.initialize_state(params) if state is None else state
        while state.epoch < self.train_config.epochs:
            state = self.run_epoch(state, dataset, graph)
        best = state.best_params if state.best_params is not None else state.params
        return TrainResult(best, list(state.history), state)

    def checkpoint_metadata(self, state: TrainState) -> dict:
        return {
            "epoch": state.epoch,
            "best_val_mae": None if math.isinf(state.best_val_mae) else state.best_val_mae,
            "history": [list(r) for r in state.history],
            "train_config": self.train_config.to_dict(),
        }


def _as_mae(value: Optional[float]) -> float:
    return math.inf if value is None else float(value)


def _fmt(value: Optional[float]) -> str:
    return "nan" if value is None else f"{value:.6f}"


def train(
    dataset: Dataset,
    graph: Optional[SensorGraph],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> Tuple[ModelParams, List[HistoryRecord]]:
    """
    Train a model and return the best-validation parameters and the history.

    ``graph`` must describe the dataset nodes; None uses ``dataset.graph``.
    """
    result = Trainer(model_config, train_config).fit(dataset, graph=graph)
    return result.params, result.history


def write_history(path: Union[str, os.PathLike], history: List[HistoryRecord]):
    """Write the history as CSV with columns epoch, train_loss, val_mae, val_rmse, val_r2."""
    frame = pd.DataFrame([tuple(r) for r in history], columns=list(HISTORY_COLUMNS))
    frame.to_csv(path, index=False)

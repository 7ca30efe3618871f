"""
Command-line interface.

Every command reads an optional JSON configuration (``--config``), applies
targeted overrides (``--set model.T=9``) and writes its outputs under ``--out``.
Log lines go to stderr; on failure a JSON error object is written to stderr and
the process exits with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from . import __version__, validation
from .base_class import Base
from .data import Dataset, ReadingWindow, load_locations, load_manifest
from .evaluation import baseline_idw, baseline_knn, evaluate_model, summarize_reports
from .exceptions import (
    BackwardError,
    ConfigError,
    DataError,
    NotFittedError,
    NumericalError,
    ShapeError,
    StkrigError,
    UsageError,
)
from .model import ModelConfig, forward, load_checkpoint, param_count, save_checkpoint
from .simulation import SynthParams, synth_generate
from .train import TrainConfig, Trainer, write_history

__all__ = ["RunConfig", "build_parser", "main", "EXIT_CODES"]

logger = logging.getLogger(__name__)

# most specific class first
EXIT_CODES = (
    (NotFittedError, 1),
    (ConfigError, 1),
    (UsageError, 1),
    (DataError, 2),
    (ShapeError, 2),
    (NumericalError, 3),
    (BackwardError, 3),
)


def __dir__() -> list[str]:
    return __all__


class RunConfig(Base):
    """
    Everything a command needs, resolved from the configuration file and flags.

    Parameters
    ----------
    model :
        Model hyperparameters, or their dictionary.
    train :
        Optimization settings, or their dictionary.
    synth :
        Parameters of the synthetic generator, or their dictionary.
    dataset :
        Path of the dataset manifest.
    out :
        Output directory.
    n_sensors, n_steps :
        Size of the synthetic dataset.
    """

    def __init__(
        self,
        model: Union[ModelConfig, Dict, None] = None,
        train: Union[TrainConfig, Dict, None] = None,
        synth: Union[SynthParams, Dict, None] = None,
        dataset: Optional[str] = None,
        out: str = "out",
        n_sensors: int = 24,
        n_steps: int = 3000,
    ):
        self.model = model
        self.train = train
        self.synth = synth
        self.dataset = dataset
        self.out = out
        self.n_sensors = n_sensors
        self.n_steps = n_steps

    @property
    def model(self) -> ModelConfig:
        return self._model

    @model.setter
    def model(self, value):
        self._model = _component(value, ModelConfig)

    @property
    def train(self) -> TrainConfig:
        return self._train

    @train.setter
    def train(self, value):
        self._train = _component(value, TrainConfig)

    @property
    def synth(self) -> SynthParams:
        return self._synth

    @synth.setter
    def synth(self, value):
        self._synth = _component(value, SynthParams)

    def validate(self) -> "RunConfig":
        self.model.validate()
        return self


def _component(value, cls):
    if value is None:
        return cls()
    if isinstance(value, cls):
        return value
    if isinstance(value, dict):
        return cls.from_dict(value)
    raise ConfigError(f"Expected a {cls.__name__} or a dictionary, got {type(value).__name__}.")


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(items: Sequence[str]) -> Dict[str, Any]:
    """
    Turn ``key=value`` strings into ``set_params`` keywords.

    Dots separate components and values are read as JSON when possible.

    Examples
    --------
    >>> parse_overrides(["model.T=9", "model.variant=short_only", "train.clip_norm=null"])
    {'model__T': 9, 'model__variant': 'short_only', 'train__clip_norm': None}
    """
    overrides = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"Overrides must look like key=value, got {item!r}.")
        overrides[key.strip().replace(".", "__")] = _parse_value(raw.strip())
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Configuration file, then explicit flags, then ``--set`` overrides."""
    params: Dict[str, Any] = {}
    if args.config is not None:
        try:
            params = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Could not read configuration {args.config}: {e}")
        if not isinstance(params, dict):
            raise ConfigError(f"Configuration {args.config} must hold a JSON object.")
    run = RunConfig.from_dict(params)
    flags = {}
    if args.dataset is not None:
        flags["dataset"] = args.dataset
    if args.out is not None:
        flags["out"] = args.out
    if args.seed is not None:
        flags["train__seed"] = args.seed
    run.set_params(**flags)
    run.set_params(**parse_overrides(args.set or []))
    return run.validate()


def _write_json(path: Path, payload: Any):
    try:
        text = json.dumps(payload, indent=2, allow_nan=False)
    except ValueError as e:
        raise NumericalError(f"Could not write {path.name}: {e}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _require_dataset(run: RunConfig) -> Dataset:
    if run.dataset is None:
        raise UsageError("This command needs a dataset manifest: pass --dataset.")
    return load_manifest(run.dataset)


def _require_checkpoints(args: argparse.Namespace) -> List[str]:
    if not args.checkpoint:
        raise UsageError("This command needs a model: pass --checkpoint.")
    return args.checkpoint


def cmd_synth(args: argparse.Namespace, run: RunConfig) -> List[Path]:
    """Write a synthetic dataset and its manifest."""
    dataset = synth_generate(run.n_sensors, run.n_steps, seed=run.train.seed, params=run.synth)
    manifest = dataset.save(run.out)
    logger.info("Synthetic dataset: %s", dataset.statistics())
    out = Path(run.out)
    files = [out / "readings.csv", out / "dist.csv", manifest]
    if dataset.graph.coords is not None:
        files.insert(2, out / "coords.csv")
    return files


def _train_one(
    run: RunConfig, dataset: Dataset, seed: int, out: Path, resume: Optional[str]
) -> List[Path]:
    if resume is not None:
        checkpoint = load_checkpoint(resume)
        model_config = checkpoint.config
        train_config = TrainConfig.from_dict(
            (checkpoint.metadata or {}).get("train_config", run.train.to_dict())
        )
        train_config.epochs = run.train.epochs
        trainer = Trainer(model_config, train_config)
        state = trainer.initialize_state(checkpoint=checkpoint)
    else:
        model_config = run.model
        train_config = TrainConfig.from_dict({**run.train.to_dict(), "seed": seed})
        trainer = Trainer(model_config, train_config)
        state = trainer.initialize_state()
    logger.info("Training %d parameters (seed %d)", param_count(state.params), train_config.seed)

    result = trainer.fit(dataset, state=state)
    final = result.state
    metadata = trainer.checkpoint_metadata(final)
    files = [
        save_checkpoint(
            out / "checkpoint.bin",
            final.params,
            model_config,
            optimizer_state=final.opt_state,
            rng_state=final.rng.bit_generator.state,
            metadata=metadata,
            best_params=result.params,
        ),
        save_checkpoint(out / "best.bin", result.params, model_config, metadata=metadata),
    ]
    write_history(out / "history.csv", result.history)
    resolved = run.to_dict()
    resolved["model"] = model_config.to_dict()
    resolved["train"] = train_config.to_dict()
    _write_json(out / "resolved-config.json", resolved)
    files += [out / "history.csv", out / "resolved-config.json"]
    return files


def cmd_train(args: argparse.Namespace, run: RunConfig) -> List[Path]:
    """
    Train ``--runs`` models with consecutive seeds.

    Every run writes ``checkpoint.bin`` (final state, resumable), ``best.bin``
    (best validation parameters), ``history.csv`` and ``resolved-config.json``;
    several runs go to ``run<i>`` subdirectories.
    """
    dataset = _require_dataset(run)
    if args.runs < 1:
        raise UsageError(f"--runs must be at least 1, got {args.runs}.")
    if args.runs > 1 and args.checkpoint:
        raise UsageError("--checkpoint resumes a single run; drop --runs.")
    resume = args.checkpoint[0] if args.checkpoint else None
    files = []
    for i in range(args.runs):
        out = Path(run.out) if args.runs == 1 else Path(run.out) / f"run{i}"
        files += _train_one(run, dataset, run.train.seed + i, out, resume)
    return files


def cmd_eval(args: argparse.Namespace, run: RunConfig) -> List[Path]:
    """
    Score every checkpoint and the k-NN and IDW baselines on the test range.

    Writes ``report.json`` and the per-sensor metrics of every checkpoint.
    """
    dataset = _require_dataset(run)
    out = Path(run.out)
    files = []
    reports, entries = [], []
    window_length = 1
    n_train = dataset.sensor_split.train.size
    k, rho = run.model.k, run.model.rho
    for i, path in enumerate(_require_checkpoints(args)):
        checkpoint = load_checkpoint(path)
        config = checkpoint.config
        window_length, k, rho = config.T, config.k, config.rho
        report = evaluate_model(dataset, checkpoint.params, config, split="test")
        reports.append(report)
        entries.append(
            {"checkpoint": str(path), "param_count": param_count(checkpoint.params), **report.to_dict()}
        )
        per_sensor = out / ("per_sensor.csv" if i == 0 else f"per_sensor_{i}.csv")
        out.mkdir(parents=True, exist_ok=True)
        report.write_per_sensor(per_sensor)
        files.append(per_sensor)
        logger.info("%s: MAE %.4f RMSE %.4f", path, report.mae, report.rmse)

    baselines = {
        "knn": baseline_knn(dataset, k=min(k, n_train), window_length=window_length).to_dict(),
        "idw": baseline_idw(dataset, rho=rho, window_length=window_length).to_dict(),
    }
    payload = {"model": entries, "summary": summarize_reports(reports), "baselines": baselines}
    _write_json(out / "report.json", payload)
    return [out / "report.json"] + files


def _resolve_time(dataset: Dataset, value: str) -> int:
    """An integer is a time index; anything else is looked up in the dataset timestamps."""
    try:
        return int(value)
    except ValueError:
        return dataset.time_position(value)


def _window_at(dataset: Dataset, time: int, T: int) -> np.ndarray:
    if not 0 <= time < dataset.n_time:
        raise UsageError(f"--time must lie in [0, {dataset.n_time}), got {time}.")
    if time < T - 1:
        raise UsageError(f"--time must be at least T - 1 = {T - 1} to fill a window, got {time}.")
    return dataset.normalized[time - T + 1 : time + 1]


def cmd_infer(args: argparse.Namespace, run: RunConfig) -> List[Path]:
    """
    Infer readings at new locations for one time point.

    All dataset sensors are known; the locations from ``--coords`` are appended
    to the graph as unknown nodes. ``--time`` is a time index or a timestamp of
    the dataset.
    """
    dataset = _require_dataset(run)
    checkpoint = load_checkpoint(_require_checkpoints(args)[0])
    if args.coords is None or args.time is None:
        raise UsageError("infer needs --coords and --time.")
    ids, coords = load_locations(args.coords)
    clash = set(ids) & set(dataset.node_ids)
    if clash:
        raise DataError(f"Location ids {sorted(clash)} already name dataset sensors.")
    config = checkpoint.config
    graph = dataset.graph.extend(coords, ids)
    known = np.zeros((config.T, dataset.n_nodes + len(ids), config.n_features))
    time = _resolve_time(dataset, args.time)
    known[:, : dataset.n_nodes, 0] = _window_at(dataset, time, config.T)
    known_mask = np.arange(graph.n_nodes) < dataset.n_nodes
    result = forward(ReadingWindow(known, known_mask, time), graph, checkpoint.params, config)
    validation.error_invalid_entry(result.prediction.values, what=f"predictions at time {time}")

    frame = pd.DataFrame({"id": ids, "x": coords[:, 0], "y": coords[:, 1]})
    new = slice(dataset.n_nodes, None)
    frame["prediction"] = dataset.scaler.inverse_transform(result.prediction.values[new, 0])
    if result.short is not None and result.long is not None:
        frame["short_term"] = dataset.scaler.inverse_transform(result.short.values[new, 0])
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "predictions.csv", index=False)
    return [out / "predictions.csv"]


def _write_square(path: Path, values: np.ndarray, node_ids: List[str]):
    frame = pd.DataFrame(values, index=pd.Index(node_ids, name="node"), columns=node_ids)
    frame.to_csv(path)


def cmd_attn_dump(args: argparse.Namespace, run: RunConfig) -> List[Path]:
    """
    Export the attention maps and adaptive adjacencies of one window.

    The window ends at ``--time``, a time index or timestamp (default: the first
    full window of the test range); training sensors are known.
    """
    dataset = _require_dataset(run)
    checkpoint = load_checkpoint(_require_checkpoints(args)[0])
    config = checkpoint.config
    if args.time is not None:
        time = _resolve_time(dataset, args.time)
    else:
        time = dataset.splits.test.start + config.T - 1
    frames = _window_at(dataset, time, config.T)[:, :, None]
    window = ReadingWindow(frames, dataset.known_mask, time)
    result = forward(window, dataset.graph, checkpoint.params, config)

    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    ids = dataset.node_ids
    if result.attention is not None:
        for suffix, maps in zip(("", "_bwd"), result.attention.directions()):
            for offset, m in zip(result.attention.frame_offsets, maps):
                path = out / f"attn_offset{offset}{suffix}.csv"
                _write_square(path, m.values, ids)
                files.append(path)
    for step, adj in enumerate(result.adaptive):
        path = out / f"adaptive_step{step}.csv"
        _write_square(path, adj.values, ids)
        files.append(path)
    return files


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "attn-dump": cmd_attn_dump,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stkrig", description="Inductive spatiotemporal kriging.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="seed of data generation and training")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", help="dataset manifest JSON")
    common.add_argument(
        "--checkpoint", action="append", help="model checkpoint; eval accepts it repeatedly"
    )
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override, e.g. model.T=9"
    )
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    train = sub.add_parser("train", parents=[common], help="train models")
    train.add_argument("--runs", type=int, default=1, help="independent runs with consecutive seeds")
    sub.add_parser("eval", parents=[common], help="evaluate checkpoints and baselines")
    infer = sub.add_parser("infer", parents=[common], help="infer readings at new locations")
    infer.add_argument("--coords", help="CSV of new locations with columns id, x, y")
    infer.add_argument("--time", help="time index or timestamp of the inferred frame")
    dump = sub.add_parser("attn-dump", parents=[common], help="export attention maps")
    dump.add_argument("--time", help="time index or timestamp of the window's target frame")
    return parser


def exit_code(error: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(error, cls):
            return code
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run a command; returns the process exit status.

    Errors outside the :class:`~stkrig.exceptions.StkrigError` hierarchy are logged
    with their traceback and exit with status 1.
    """
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )
        run = resolve_config(args)
        files = COMMANDS[args.command](args, run)
    except Exception as e:
        if not isinstance(e, StkrigError):
            logger.exception("Unexpected failure")
        code = exit_code(e)
        error = {"error": type(e).__name__, "message": str(e), "exit_code": code}
        print(json.dumps(error), file=sys.stderr)
        return code
    print(json.dumps({"command": args.command, "outputs": [str(f) for f in files]}))
    return 0

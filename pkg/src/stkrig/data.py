"""Sensor datasets: CSV ingestion, time and sensor splits, scaling and windows."""

from __future__ import annotations

import json
import logging
import os
import warnings
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from . import validation
from .base_class import Base
from .exceptions import ConfigError, DataError
from .graph import SensorGraph

__all__ = [
    "ReadingWindow",
    "TimeSplit",
    "Splits",
    "SensorSplit",
    "Scaler",
    "DatasetStatistics",
    "DataConfig",
    "Dataset",
    "time_splits",
    "sensor_split",
    "fill_missing",
    "load_csv",
    "load_manifest",
    "load_locations",
    "make_windows",
]

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
COORD_UNITS = ("euclidean", "degrees")


def __dir__() -> list[str]:
    return __all__


class ReadingWindow(NamedTuple):
    """``T`` consecutive frames of node readings.

    Attributes
    ----------
    frames :
        ``T x N x D`` readings, oldest first.
    known_mask :
        True for nodes whose readings the model may see.
    target_index :
        Index of the last (target) frame in the source dataset.
    missing_mask :
        ``T x N``, True where the reading was missing and filled.
    """

    frames: NDArray
    known_mask: NDArray
    target_index: int = 0
    missing_mask: Optional[NDArray] = None

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.frames.shape[1]

    @property
    def target_frame(self) -> NDArray:
        return self.frames[-1]

    def with_known_mask(self, known_mask: ArrayLike) -> "ReadingWindow":
        return self._replace(known_mask=validation.check_mask(known_mask, self.n_nodes))


class TimeSplit(NamedTuple):
    """Half-open range ``[start, stop)`` of time indices."""

    start: int
    stop: int

    @property
    def length(self) -> int:
        return self.stop - self.start


class Splits(NamedTuple):
    train: TimeSplit
    val: TimeSplit
    test: TimeSplit


class SensorSplit(NamedTuple):
    """Sorted node indices of the training and testing sensors."""

    train: NDArray
    test: NDArray

    def known_mask(self, n_nodes: int) -> NDArray:
        mask = np.zeros(n_nodes, dtype=bool)
        mask[self.train] = True
        return mask


class Scaler(NamedTuple):
    """Z-score transform fitted on the training split."""

    mean: float
    std: float

    def transform(self, x: ArrayLike) -> NDArray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, x: ArrayLike) -> NDArray:
        return np.asarray(x, dtype=float) * self.std + self.mean


class DatasetStatistics(NamedTuple):
    category: str
    adjacency: str
    n_sensors: int
    n_time_points: int
    frequency: str
    mean: float
    std: float


class DataConfig(Base):
    """
    Options describing how a dataset is read and split.

    Parameters
    ----------
    frequency :
        Sampling frequency label, e.g. ``"5min"``.
    category :
        Free-form category label, e.g. ``"traffic speed"``.
    coord_units :
        ``"euclidean"`` or ``"degrees"`` (haversine distances in meters).
    kernel_sigma :
        Gaussian kernel width; None uses the std of the off-diagonal distances.
    kernel_threshold :
        Kernel weights below this value are dropped.
    directed :
        None infers directedness from the symmetry of the distances.
    split_fractions :
        Train, validation and test fractions of the time points.
    sensor_split_seed :
        Seed of the 50/50 training/testing sensor split.
    timestamps :
        Whether the first column of the readings file holds timestamps.
    """

    def __init__(
        self,
        frequency: str = "unknown",
        category: str = "unknown",
        coord_units: str = "euclidean",
        kernel_sigma: Optional[float] = None,
        kernel_threshold: float = 0.0,
        directed: Optional[bool] = None,
        split_fractions: Sequence[float] = (0.7, 0.2, 0.1),
        sensor_split_seed: int = 0,
        timestamps: bool = False,
    ):
        self.frequency = frequency
        self.category = category
        self.coord_units = coord_units
        self.kernel_sigma = kernel_sigma
        self.kernel_threshold = kernel_threshold
        self.directed = directed
        self.split_fractions = split_fractions
        self.sensor_split_seed = sensor_split_seed
        self.timestamps = timestamps

    @property
    def coord_units(self) -> str:
        return self._coord_units

    @coord_units.setter
    def coord_units(self, value: str):
        self._coord_units = validation.check_choice(value, "coord_units", COORD_UNITS)

    @property
    def kernel_sigma(self) -> Optional[float]:
        return self._kernel_sigma

    @kernel_sigma.setter
    def kernel_sigma(self, value: Optional[float]):
        self._kernel_sigma = None if value is None else validation.check_positive(value, "kernel_sigma")

    @property
    def split_fractions(self) -> List[float]:
        return self._split_fractions

    @split_fractions.setter
    def split_fractions(self, value: Sequence[float]):
        if len(value) != 3:
            raise ConfigError(f"split_fractions must hold three values, got {value!r}.")
        fractions = [validation.check_fraction(f, "split fraction") for f in value]
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split_fractions must sum to 1, got {sum(fractions)}.")
        self._split_fractions = fractions

    @property
    def sensor_split_seed(self) -> int:
        return self._sensor_split_seed

    @sensor_split_seed.setter
    def sensor_split_seed(self, value: int):
        self._sensor_split_seed = validation.check_integer(value, "sensor_split_seed")


def time_splits(n_time: int, fractions: Sequence[float] = (0.7, 0.2, 0.1)) -> Splits:
    """
    Contiguous, ordered train/validation/test ranges.

    Examples
    --------
    >>> [tuple(s) for s in time_splits(3000)]
    [(0, 2100), (2100, 2700), (2700, 3000)]
    """
    n_train = int(np.floor(n_time * fractions[0] + 1e-9))
    n_val = int(np.floor(n_time * fractions[1] + 1e-9))
    return Splits(
        TimeSplit(0, n_train),
        TimeSplit(n_train, n_train + n_val),
        TimeSplit(n_train + n_val, n_time),
    )


def sensor_split(n_nodes: int, seed: int = 0) -> SensorSplit:
    """Seeded split leaving ``n_nodes // 2`` sensors out for testing."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_nodes)
    n_test = n_nodes // 2
    return SensorSplit(train=np.sort(perm[n_test:]), test=np.sort(perm[:n_test]))


def fill_missing(readings: ArrayLike) -> Tuple[NDArray, NDArray]:
    """
    Forward-fill then back-fill NaN readings per sensor.

    Returns
    -------
    filled :
        The readings without NaN.
    missing_mask :
        True where a value was filled.

    Raises
    ------
    DataError
        If a sensor has no reading at all.
    """
    frame = pd.DataFrame(np.asarray(readings, dtype=float))
    missing = frame.isna().to_numpy()
    empty = missing.all(axis=0)
    if empty.any():
        raise DataError(f"Sensors at columns {np.flatnonzero(empty).tolist()} have no readings.")
    filled = frame.ffill().bfill().to_numpy()
    return filled, missing


class Dataset:
    """
    Sensor readings on a graph, with time splits, a sensor split and scaling.

    The dataset is immutable once built: arrays are read-only and may be shared
    across threads.

    Parameters
    ----------
    readings :
        ``T_total x N`` readings (one attribute per node); NaN marks missing cells.
    graph :
        Sensor graph with the same node order as the readings columns.
    missing_mask :
        Optional ``T_total x N`` mask; derived from NaN cells when omitted.
    timestamps :
        Optional label per time point.
    frequency, category :
        Descriptive labels reported by :meth:`statistics`.
    split_fractions :
        Train, validation and test fractions of the time points.
    sensor_split_seed :
        Seed of the training/testing sensor split.
    metadata :
        Free-form JSON-serializable information, e.g. generator parameters.
    scaler :
        Z-score transform to reuse; fitted on the training split when omitted.
    """

    def __init__(
        self,
        readings: ArrayLike,
        graph: SensorGraph,
        missing_mask: Optional[ArrayLike] = None,
        timestamps: Optional[Sequence[str]] = None,
        frequency: str = "unknown",
        category: str = "unknown",
        split_fractions: Sequence[float] = (0.7, 0.2, 0.1),
        sensor_split_seed: int = 0,
        metadata: Optional[Dict] = None,
        scaler: Optional[Scaler] = None,
    ):
        readings = np.array(readings, dtype=float)
        if readings.ndim != 2:
            raise DataError(f"readings must be a T x N matrix, got shape {readings.shape}.")
        if readings.shape[1] != graph.n_nodes:
            raise DataError(
                f"readings have {readings.shape[1]} sensors but the graph has {graph.n_nodes} nodes."
            )
        filled, nan_mask = fill_missing(readings)
        if missing_mask is None:
            missing_mask = nan_mask
        else:
            missing_mask = np.asarray(missing_mask, dtype=bool)
            if missing_mask.shape != readings.shape:
                raise DataError(
                    f"missing_mask shape {missing_mask.shape} does not match readings {readings.shape}."
                )
            missing_mask = missing_mask | nan_mask
        if timestamps is not None and len(timestamps) != readings.shape[0]:
            raise DataError(
                f"Expected {readings.shape[0]} timestamps, got {len(timestamps)}."
            )

        self.readings = filled
        self.missing_mask = missing_mask
        self.graph = graph
        self.timestamps = None if timestamps is None else [str(t) for t in timestamps]
        self.frequency = str(frequency)
        self.category = str(category)
        self.split_fractions = list(DataConfig(split_fractions=split_fractions).split_fractions)
        self.sensor_split_seed = int(sensor_split_seed)
        self.metadata = dict(metadata or {})

        self.splits = time_splits(self.n_time, self.split_fractions)
        self.sensor_split = sensor_split(self.n_nodes, self.sensor_split_seed)
        self.scaler = self._fit_scaler() if scaler is None else scaler
        self.normalized = self.scaler.transform(self.readings)
        for arr in (self.readings, self.missing_mask, self.normalized):
            arr.setflags(write=False)

    @property
    def n_time(self) -> int:
        return self.readings.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.readings.shape[1]

    @property
    def node_ids(self) -> List[str]:
        return self.graph.node_ids

    @property
    def known_mask(self) -> NDArray:
        """True for the training sensors."""
        return self.sensor_split.known_mask(self.n_nodes)

    def _fit_scaler(self) -> Scaler:
        train = self.splits.train
        cols = self.sensor_split.train if self.sensor_split.train.size else np.arange(self.n_nodes)
        values = self.readings[train.start : train.stop][:, cols]
        observed = ~self.missing_mask[train.start : train.stop][:, cols]
        values = values[observed]
        if values.size == 0:
            raise DataError("The training split holds no observed readings.")
        std = float(values.std())
        return Scaler(float(values.mean()), std if std > 0 else 1.0)

    def split_range(self, split: Union[str, TimeSplit]) -> TimeSplit:
        if isinstance(split, TimeSplit):
            return split
        split = validation.check_choice(split, "split", SPLIT_NAMES)
        return getattr(self.splits, split)

    def time_position(self, timestamp: str) -> int:
        """
        Time index of a timestamp label.

        Labels match verbatim first, then as dates, so ``2024-01-01T00:05`` finds
        ``2024-01-01 00:05:00``.

        Raises
        ------
        DataError
            If the dataset has no timestamps or none matches.
        """
        if self.timestamps is None:
            raise DataError("The dataset has no timestamps; use a time index instead.")
        timestamp = str(timestamp).strip()
        if timestamp in self.timestamps:
            return self.timestamps.index(timestamp)
        try:
            matches = np.flatnonzero(pd.to_datetime(self.timestamps) == pd.Timestamp(timestamp))
        except (ValueError, TypeError):
            matches = np.array([], dtype=int)
        if matches.size == 0:
            raise DataError(f"Timestamp {timestamp!r} is not in the dataset.")
        return int(matches[0])

    def statistics(self) -> DatasetStatistics:
        """Category, adjacency kind, size, frequency, mean and std of observed readings."""
        observed = self.readings[~self.missing_mask]
        if self.missing_mask.any():
            warnings.warn(
                f"{int(self.missing_mask.sum())} missing readings excluded from the statistics.",
                UserWarning,
                stacklevel=2,
            )
        return DatasetStatistics(
            category=self.category,
            adjacency="directed" if self.graph.directed else "undirected",
            n_sensors=self.n_nodes,
            n_time_points=self.n_time,
            frequency=self.frequency,
            mean=float(observed.mean()),
            std=float(observed.std()),
        )

    def restrict_nodes(self, index: ArrayLike) -> "Dataset":
        """Dataset on the sensors in ``index``, with its own sensor split and the parent scaler."""
        index = np.asarray(index, dtype=int)
        readings = np.where(self.missing_mask, np.nan, self.readings)[:, index]
        return Dataset(
            readings,
            self.graph.restrict(index),
            missing_mask=self.missing_mask[:, index],
            timestamps=self.timestamps,
            frequency=self.frequency,
            category=self.category,
            split_fractions=self.split_fractions,
            sensor_split_seed=self.sensor_split_seed,
            metadata=self.metadata,
            scaler=self.scaler,
        )

    def save(self, directory: Union[str, os.PathLike], **manifest_extra) -> Path:
        """
        Write ``readings.csv``, ``dist.csv``, ``coords.csv`` (when available) and
        ``manifest.json`` into ``directory``.

        Returns
        -------
        :
            Path of the manifest.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        readings = pd.DataFrame(
            np.where(self.missing_mask, np.nan, self.readings), columns=self.node_ids
        )
        if self.timestamps is not None:
            readings.insert(0, "timestamp", self.timestamps)
        readings.to_csv(directory / "readings.csv", index=False)
        pd.DataFrame(self.graph.dist, columns=self.node_ids).to_csv(
            directory / "dist.csv", index=False
        )
        manifest = {
            "readings": "readings.csv",
            "distances": "dist.csv",
            "frequency": self.frequency,
            "category": self.category,
            "coord_units": self.graph.coord_units,
            "kernel_sigma": self.graph.sigma,
            "kernel_threshold": self.graph.threshold,
            "directed": self.graph.directed,
            "split_fractions": self.split_fractions,
            "sensor_split_seed": self.sensor_split_seed,
            "timestamps": self.timestamps is not None,
        }
        if self.graph.coords is not None:
            coords = pd.DataFrame(
                {"id": self.node_ids, "x": self.graph.coords[:, 0], "y": self.graph.coords[:, 1]}
            )
            coords.to_csv(directory / "coords.csv", index=False)
            manifest["coords"] = "coords.csv"
        manifest.update(self.metadata)
        manifest.update(manifest_extra)
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    def __repr__(self):
        return (
            f"Dataset(n_time={self.n_time}, n_nodes={self.n_nodes}, "
            f"frequency={self.frequency!r}, category={self.category!r})"
        )


def _numeric_frame(frame: pd.DataFrame, path) -> NDArray:
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() & frame.notna()
    if bad.to_numpy().any():
        row, col = np.argwhere(bad.to_numpy())[0]
        raise DataError(
            f"{path}: non-numeric cell {frame.iat[row, col]!r} in column {frame.columns[col]!r}."
        )
    return numeric.to_numpy(dtype=float)


def _read_readings(path, timestamps: bool) -> Tuple[List[str], NDArray, Optional[List[str]]]:
    try:
        frame = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
        # read_csv mangles duplicated column names
        header = pd.read_csv(path, header=None, nrows=1, dtype=str, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Could not read readings file {path}: {e}")
    stamps = None
    if timestamps:
        stamps = frame.iloc[:, 0].tolist()
        frame = frame.iloc[:, 1:]
    raw = [str(c).strip() for c in header.iloc[0, 1 if timestamps else 0 :]]
    if len(set(raw)) != len(raw):
        raise DataError(f"{path}: duplicated sensor ids in the header.")
    ids = [str(c).strip() for c in frame.columns]
    return ids, _numeric_frame(frame, path), stamps


def _read_distances(path, ids: List[str]) -> NDArray:
    try:
        frame = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Could not read distance file {path}: {e}")
    header = [str(c).strip() for c in frame.columns]
    values = _numeric_frame(frame, path)
    if values.shape[0] != values.shape[1]:
        raise DataError(f"{path}: distance matrix is not square, got shape {values.shape}.")
    if set(header) != set(ids):
        raise DataError(f"{path}: distance header does not match the readings header.")
    order = [header.index(i) for i in ids]
    return values[np.ix_(order, order)]


def _read_coords(path, ids: List[str]) -> NDArray:
    try:
        frame = pd.read_csv(
            path, dtype={"id": str}, float_precision="round_trip", skipinitialspace=True
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Could not read coordinates file {path}: {e}")
    if not {"id", "x", "y"} <= set(frame.columns):
        raise DataError(f"{path}: coordinates need the columns id, x, y.")
    frame = frame.set_index(frame["id"].str.strip())
    missing = [i for i in ids if i not in frame.index]
    if missing:
        raise DataError(f"{path}: no coordinates for sensors {missing}.")
    return _numeric_frame(frame.loc[ids, ["x", "y"]], path)


def load_locations(path: Union[str, os.PathLike]) -> Tuple[List[str], NDArray]:
    """
    Read a coordinates CSV with columns ``id, x, y``.

    Returns
    -------
    :
        The ids in file order and the ``n x 2`` positions.
    """
    try:
        frame = pd.read_csv(
            path, dtype={"id": str}, float_precision="round_trip", skipinitialspace=True
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Could not read coordinates file {path}: {e}")
    if not {"id", "x", "y"} <= set(frame.columns):
        raise DataError(f"{path}: coordinates need the columns id, x, y.")
    ids = [str(i).strip() for i in frame["id"]]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicated location ids.")
    return ids, _numeric_frame(frame[["x", "y"]], path)


def load_csv(
    readings_path: Union[str, os.PathLike],
    dist_path: Optional[Union[str, os.PathLike]] = None,
    coords_path: Optional[Union[str, os.PathLike]] = None,
    config: Optional[DataConfig] = None,
) -> Dataset:
    """
    Read a dataset from CSV files.

    Parameters
    ----------
    readings_path :
        Header row of sensor ids, one row per time point; empty cells are missing.
    dist_path :
        Square distance matrix whose header lists the same ids (any order).
    coords_path :
        Columns ``id, x, y``; used for distances when ``dist_path`` is None.
    config :
        Reading and split options.

    Raises
    ------
    DataError
        On header mismatch, non-numeric cells or a non-square distance matrix.
    """
    config = DataConfig() if config is None else config
    if dist_path is None and coords_path is None:
        raise DataError("Either a distance file or a coordinates file is required.")
    ids, readings, stamps = _read_readings(readings_path, config.timestamps)
    coords = None if coords_path is None else _read_coords(coords_path, ids)
    options = dict(
        sigma=config.kernel_sigma,
        threshold=config.kernel_threshold,
        node_ids=ids,
    )
    if dist_path is not None:
        graph = SensorGraph(
            _read_distances(dist_path, ids),
            directed=config.directed,
            coords=coords,
            coord_units=config.coord_units,
            **options,
        )
    else:
        graph = SensorGraph.from_coords(coords, units=config.coord_units, **options)

    dataset = Dataset(
        readings,
        graph,
        timestamps=stamps,
        frequency=config.frequency,
        category=config.category,
        split_fractions=config.split_fractions,
        sensor_split_seed=config.sensor_split_seed,
    )
    logger.debug("Loaded %s: %r", readings_path, dataset)
    return dataset


def load_manifest(path: Union[str, os.PathLike]) -> Dataset:
    """Read a dataset described by a manifest JSON; relative paths resolve from its directory."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Could not read manifest {path}: {e}")
    if "readings" not in manifest:
        raise DataError(f"Manifest {path} has no 'readings' entry.")
    root = path.parent

    def resolve(key):
        return None if manifest.get(key) is None else root / manifest[key]

    known = set(DataConfig._get_param_names())
    config = DataConfig(**{k: v for k, v in manifest.items() if k in known})
    dataset = load_csv(resolve("readings"), resolve("distances"), resolve("coords"), config)
    generator = manifest.get("generator")
    if generator is not None:
        dataset.metadata["generator"] = generator
    return dataset


def make_windows(
    dataset: Dataset,
    split: Union[str, TimeSplit],
    T: int,
    stride: int = 1,
    known_mask: Optional[ArrayLike] = None,
    normalized: bool = True,
) -> Iterator[ReadingWindow]:
    """
    Sliding windows lying entirely inside a split.

    Parameters
    ----------
    dataset :
        Source dataset.
    split :
        ``"train"``, ``"val"``, ``"test"`` or an explicit :class:`TimeSplit`.
    T :
        Window length.
    stride :
        Step between consecutive window starts.
    known_mask :
        Observed nodes; defaults to the training sensors.
    normalized :
        Whether frames hold z-scored readings.

    Raises
    ------
    DataError
        If the split is shorter than ``T``.
    """
    T = validation.check_integer(T, "T", minimum=1)
    stride = validation.check_integer(stride, "stride", minimum=1)
    span = dataset.split_range(split)
    if span.length < T:
        raise DataError(f"Split of length {span.length} is shorter than the window length T={T}.")
    known_mask = dataset.known_mask if known_mask is None else known_mask
    known_mask = validation.check_mask(known_mask, dataset.n_nodes)
    values = dataset.normalized if normalized else dataset.readings
    for start in range(span.start, span.stop - T + 1, stride):
        stop = start + T
        yield ReadingWindow(
            frames=values[start:stop, :, None],
            known_mask=known_mask,
            target_index=stop - 1,
            missing_mask=dataset.missing_mask[start:stop],
        )

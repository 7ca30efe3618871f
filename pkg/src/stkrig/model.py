"""
Kriging model assembly: configuration, parameters, forward pass and checkpoints.

The forward pass fills unknown nodes of a window with k-IDW pseudo readings, runs the
short-term joint spatiotemporal attention network on the last ``T_s + 1`` frames and
the skip graph GRU over the whole window, feeding the short-term output to the last
recurrent step. The ``temporal_conv`` variant swaps the attention network for
a gated temporal convolution.
"""

# required to get ArrayLike to render correctly
from __future__ import annotations

import json
import os
import struct
import warnings
from collections import UserDict
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Union

import numpy as np
from numpy.typing import NDArray

from . import asggru, jstgat, tcn, validation
from . import autodiff as ad
from .base_class import Base
from .data import ReadingWindow
from .exceptions import ConfigError, DataError, NotFittedError, ShapeError
from .graph import SensorGraph
from .pseudo import k_idw_frames
from .solvers import AdamState
from .typing import ParamShapes

__all__ = [
    "ModelConfig",
    "ModelParams",
    "ForwardResult",
    "Checkpoint",
    "param_specs",
    "param_shapes",
    "xavier_normal",
    "init_params",
    "param_count",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("full", "short_only", "long_only", "temporal_conv")
CHECKPOINT_FORMAT = "stkrig-checkpoint"
CHECKPOINT_VERSION = 1


def __dir__() -> list[str]:
    return __all__


class ModelConfig(Base):
    """
    Hyperparameters of the kriging model.

    Parameters
    ----------
    T :
        Window length.
    T_s :
        Number of neighbor frames attended by the short-term component.
    T_k :
        Skip of the recurrent unit.
    k :
        Neighbors used by k-IDW.
    rho :
        Distance decay of k-IDW.
    lam :
        Temporal decay of the attention maps.
    alpha :
        Saturation rate of the adaptive adjacency.
    gamma, mu :
        Impact factors of the joint spatiotemporal convolution.
    hidden :
        Hidden size ``F``.
    n_layers :
        Propagation orders ``L`` of every graph convolution.
    n_features :
        Attributes per node ``D``.
    directed :
        Whether the graph convolutions use both adjacency directions.
    adaptive_norm :
        ``"row"`` or ``"none"``; normalization of the adaptive adjacency.
    variant :
        ``"full"``, ``"short_only"``, ``"long_only"``, or ``"temporal_conv"`` where a
        gated temporal convolution replaces the short-term attention network.

    Examples
    --------
    >>> config = ModelConfig()
    >>> config.T, config.T_s, config.T_k, config.hidden, config.n_layers
    (25, 3, 4, 16, 3)
    >>> config.set_params(T=9).validate().T
    9
    """

    def __init__(
        self,
        T: int = 25,
        T_s: int = 3,
        T_k: int = 4,
        k: int = 5,
        rho: float = 1.0,
        lam: float = 1.0,
        alpha: float = 2.0,
        gamma: float = 0.1,
        mu: float = 0.9,
        hidden: int = 16,
        n_layers: int = 3,
        n_features: int = 1,
        directed: bool = False,
        adaptive_norm: str = "row",
        variant: str = "full",
    ):
        self.T = T
        self.T_s = T_s
        self.T_k = T_k
        self.k = k
        self.rho = rho
        self.lam = lam
        self.alpha = alpha
        self.gamma = gamma
        self.mu = mu
        self.hidden = hidden
        self.n_layers = n_layers
        self.n_features = n_features
        self.directed = directed
        self.adaptive_norm = adaptive_norm
        self.variant = variant

    @property
    def T(self) -> int:
        return self._T

    @T.setter
    def T(self, value: int):
        self._T = validation.check_integer(value, "T", minimum=1)

    @property
    def T_s(self) -> int:
        return self._T_s

    @T_s.setter
    def T_s(self, value: int):
        self._T_s = validation.check_integer(value, "T_s", minimum=0)

    @property
    def T_k(self) -> int:
        return self._T_k

    @T_k.setter
    def T_k(self, value: int):
        self._T_k = validation.check_integer(value, "T_k", minimum=1)

    @property
    def k(self) -> int:
        return self._k

    @k.setter
    def k(self, value: int):
        self._k = validation.check_integer(value, "k", minimum=1)

    @property
    def rho(self) -> float:
        return self._rho

    @rho.setter
    def rho(self, value: float):
        self._rho = validation.check_positive(value, "rho")

    @property
    def lam(self) -> float:
        return self._lam

    @lam.setter
    def lam(self, value: float):
        self._lam = validation.check_positive(value, "lam", strict=False)

    @property
    def alpha(self) -> float:
        return self._alpha

    @alpha.setter
    def alpha(self, value: float):
        self._alpha = validation.check_positive(value, "alpha")

    @property
    def gamma(self) -> float:
        return self._gamma

    @gamma.setter
    def gamma(self, value: float):
        self._gamma = validation.check_positive(value, "gamma", strict=False)

    @property
    def mu(self) -> float:
        return self._mu

    @mu.setter
    def mu(self, value: float):
        self._mu = validation.check_positive(value, "mu", strict=False)

    @property
    def hidden(self) -> int:
        return self._hidden

    @hidden.setter
    def hidden(self, value: int):
        self._hidden = validation.check_integer(value, "hidden", minimum=1)

    @property
    def n_layers(self) -> int:
        return self._n_layers

    @n_layers.setter
    def n_layers(self, value: int):
        self._n_layers = validation.check_integer(value, "n_layers", minimum=1)

    @property
    def n_features(self) -> int:
        return self._n_features

    @n_features.setter
    def n_features(self, value: int):
        self._n_features = validation.check_integer(value, "n_features", minimum=1)

    @property
    def directed(self) -> bool:
        return self._directed

    @directed.setter
    def directed(self, value: bool):
        self._directed = validation.check_bool(value, "directed")

    @property
    def adaptive_norm(self) -> str:
        return self._adaptive_norm

    @adaptive_norm.setter
    def adaptive_norm(self, value: str):
        self._adaptive_norm = validation.check_choice(value, "adaptive_norm", asggru.ADAPTIVE_NORMS)

    @property
    def variant(self) -> str:
        return self._variant

    @variant.setter
    def variant(self, value: str):
        self._variant = validation.check_choice(value, "variant", VARIANTS)

    @property
    def uses_short_term(self) -> bool:
        return self.variant != "long_only"

    @property
    def uses_long_term(self) -> bool:
        return self.variant != "short_only"

    @property
    def uses_attention(self) -> bool:
        return self.uses_short_term and self.variant != "temporal_conv"

    def validate(self) -> "ModelConfig":
        """
        Check the invariants linking several fields.

        Raises
        ------
        ConfigError
            If ``T_s >= T`` or ``T - 1`` is not a multiple of ``T_k``.
        """
        if self.T_s >= self.T:
            raise ConfigError(f"T_s={self.T_s} must be smaller than T={self.T}.")
        if self.uses_long_term and self.T > 1:
            if self.T_k >= self.T:
                raise ConfigError(f"T_k={self.T_k} must be smaller than T={self.T}.")
            if (self.T - 1) % self.T_k:
                raise ConfigError(f"T - 1 = {self.T - 1} must be divisible by T_k={self.T_k}.")
        return self


class ModelParams(UserDict):
    """
    Learnable matrices of the model, keyed by stable dotted names.

    Names are prefixed by the component (``jstgat.``, ``tcn.`` or ``asggru.``) and only
    depend on ``D``, ``F``, ``L``, the directedness and, for ``tcn.``, ``T_s``; never on
    the node count.

    Examples
    --------
    >>> params = init_params(ModelConfig(), seed=0)
    >>> params["jstgat.attn.fwd.W_a"].shape
    (1, 16)
    """

    def __setitem__(self, key, value):
        if not isinstance(key, str):
            raise ConfigError("Parameter names must be strings!")
        if not isinstance(value, ad.DiffMatrix):
            value = ad.parameter(value, name=key)
        value.name = key
        super().__setitem__(key, value)

    @property
    def shapes(self) -> ParamShapes:
        return {k: v.shape for k, v in self.data.items()}

    def arrays(self) -> Dict[str, NDArray]:
        """Copies of the values, keyed by name."""
        return {k: v.numpy() for k, v in self.data.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: ad.parameter(v.values, name=k) for k, v in self.data.items()})

    def jstgat(self, config: ModelConfig) -> jstgat.JstGatParams:
        return jstgat.JstGatParams.from_params(self, config.n_layers, config.directed)

    def tcn(self, config: ModelConfig) -> tcn.TemporalConvParams:
        return tcn.TemporalConvParams.from_params(
            self, config.T_s, config.n_layers, config.directed
        )

    def asggru(self, config: ModelConfig) -> asggru.AsgGruParams:
        return asggru.AsgGruParams.from_params(
            self, config.n_layers, config.directed, alpha=config.alpha
        )

    def check_compatible(self, config: ModelConfig):
        """
        Raises
        ------
        ShapeError
            If the names or shapes differ from those ``config`` requires.
        """
        expected = param_shapes(config)
        if set(expected) != set(self.data):
            missing = sorted(set(expected) - set(self.data))
            extra = sorted(set(self.data) - set(expected))
            raise ShapeError(
                f"Parameters do not match the configuration: missing {missing}, unexpected {extra}."
            )
        for name, shape in expected.items():
            if self.data[name].shape != shape:
                raise ShapeError(
                    f"Parameter {name!r} has shape {self.data[name].shape}, expected {shape}."
                )

    def __repr__(self):
        return "\n".join(f"{k}: shape {v.shape}" for k, v in self.data.items())

    def __eq__(self, other):
        if not isinstance(other, Mapping) or set(self.data) != set(other):
            return False
        return all(
            np.array_equal(v.values, getattr(other[k], "values", other[k]))
            for k, v in self.data.items()
        )


class ForwardResult(NamedTuple):
    """Outputs of one forward pass.

    Attributes
    ----------
    short :
        Short-term inference ``N x D``, None for the ``long_only`` variant.
    long :
        Long-term inference ``N x D``, None for the ``short_only`` variant.
    attention :
        Rescaled attention maps of the short-term component, None without the
        attention network.
    adaptive :
        Adaptive adjacency of every recurrent step.
    step_times :
        Window frame index of every recurrent step.
    pseudo_frames :
        The k-IDW filled ``T x N x D`` window.
    """

    short: Optional[ad.DiffMatrix]
    long: Optional[ad.DiffMatrix]
    attention: Optional[jstgat.AttentionMaps]
    adaptive: List[ad.DiffMatrix]
    step_times: List[int]
    pseudo_frames: NDArray

    @property
    def prediction(self) -> ad.DiffMatrix:
        """The long-term output when available, else the short-term one."""
        return self.long if self.long is not None else self.short


class Checkpoint(NamedTuple):
    params: ModelParams
    config: ModelConfig
    optimizer_state: Optional[AdamState] = None
    rng_state: Optional[Dict[str, Any]] = None
    metadata: Optional[Dict[str, Any]] = None
    best_params: Optional[ModelParams] = None


def param_specs(config: ModelConfig) -> Dict[str, jstgat.ParamSpec]:
    """Name -> :class:`~stkrig.jstgat.ParamSpec` of every matrix the variant uses."""
    specs = {}
    shape_args = (config.n_features, config.hidden, config.n_layers, config.directed)
    if config.uses_attention:
        specs.update(jstgat.param_specs(*shape_args))
    elif config.uses_short_term:
        specs.update(tcn.param_specs(*shape_args, T_s=config.T_s))
    if config.uses_long_term:
        specs.update(asggru.param_specs(*shape_args))
    return specs


def param_shapes(config: ModelConfig) -> ParamShapes:
    """Name -> ``(rows, cols)``; total and collision-free."""
    return {name: spec.shape for name, spec in param_specs(config).items()}


def xavier_normal(rows: int, cols: int, rng: np.random.Generator) -> NDArray:
    """Draw from ``Normal(0, 2 / (rows + cols))``."""
    return rng.normal(0.0, np.sqrt(2.0 / (rows + cols)), size=(rows, cols))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """
    Xavier-normal weights and zero biases, deterministic per seed.

    Parameters
    ----------
    config :
        Model configuration.
    seed :
        Any value accepted by :func:`numpy.random.default_rng`.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, spec in param_specs(config).items():
        if spec.is_bias:
            params[name] = np.zeros(spec.shape)
        else:
            params[name] = xavier_normal(spec.rows, spec.cols, rng)
    return params


def param_count(params: Mapping[str, Any]) -> int:
    """
    Total number of learnable scalars.

    Accepts matrices, arrays or ``(rows, cols)`` shapes as values.

    Examples
    --------
    >>> param_count({"W": (2, 3)})
    6
    """
    total = 0
    for value in params.values():
        if isinstance(value, tuple):
            total += int(np.prod(value))
        else:
            total += int(np.size(getattr(value, "values", value)))
    return total


def _adjacencies(graph: SensorGraph, config: ModelConfig) -> List[NDArray]:
    if graph.directed and not config.directed:
        raise ConfigError("The graph is directed but the model was configured as undirected.")
    if config.directed:
        return [graph.adj_fwd, graph.adj_bwd]
    return [graph.adj_fwd]


def _effective_k(config: ModelConfig, n_known: int) -> int:
    if n_known == 0:
        raise DataError("At least one known sensor is required.")
    if n_known < config.k:
        warnings.warn(
            f"Only {n_known} known sensors, k-IDW uses k={n_known} instead of {config.k}.",
            UserWarning,
            stacklevel=3,
        )
        return n_known
    return config.k


def forward(
    window: ReadingWindow,
    graph: SensorGraph,
    params: Optional[ModelParams],
    config: ModelConfig,
) -> ForwardResult:
    """
    Short-term and long-term inference of the last frame of ``window``.

    Parameters
    ----------
    window :
        ``T`` frames with the known-node partition; readings of unknown nodes are
        never read.
    graph :
        Sensor graph on the window's nodes.
    params :
        Model parameters.
    config :
        Model configuration.

    Returns
    -------
    :
        A :class:`ForwardResult` covering all ``N`` nodes.

    Raises
    ------
    NotFittedError
        If ``params`` is None.
    ShapeError
        If the window does not match the configuration or the graph.
    """
    if params is None:
        raise NotFittedError("Model parameters are required; train or load a checkpoint first.")
    config.validate()
    frames = np.asarray(window.frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] != config.T or frames.shape[2] != config.n_features:
        raise ShapeError(
            f"Window frames have shape {frames.shape}, expected ({config.T}, N, {config.n_features})."
        )
    if frames.shape[1] != graph.n_nodes:
        raise ShapeError(
            f"Window has {frames.shape[1]} nodes but the graph has {graph.n_nodes}."
        )
    known_mask = validation.check_mask(window.known_mask, graph.n_nodes)
    k = _effective_k(config, int(known_mask.sum()))
    filled = k_idw_frames(frames, known_mask, graph.dist, k=k, rho=config.rho)
    adjacencies = _adjacencies(graph, config)

    short, maps = None, None
    short_frames = list(filled[config.T - config.T_s - 1 :])
    if config.uses_attention:
        short, maps = jstgat.short_term_forward(
            short_frames,
            adjacencies,
            params.jstgat(config),
            gamma=config.gamma,
            mu=config.mu,
            lam=config.lam,
        )
    elif config.uses_short_term:
        short = tcn.temporal_conv_forward(short_frames, adjacencies, params.tcn(config))

    long, adaptive, step_times = None, [], []
    if config.uses_long_term:
        asg = params.asggru(config)
        records = asggru.unroll_states(
            list(filled),
            short,
            adjacencies,
            asg,
            config.T_k,
            adaptive_norm=config.adaptive_norm,
        )
        long = asggru.long_term_head(records[-1].state.H, asg)
        adaptive = [r.adaptive_adj for r in records]
        step_times = [r.state.step_time for r in records]

    return ForwardResult(short, long, maps, adaptive, step_times, filled)


def save_checkpoint(
    path: Union[str, os.PathLike],
    params: ModelParams,
    config: ModelConfig,
    optimizer_state: Optional[AdamState] = None,
    rng_state: Optional[Dict[str, Any]] = None,
    metadata: Optional[Dict[str, Any]] = None,
    best_params: Optional[ModelParams] = None,
) -> Path:
    """
    Write parameters as named little-endian float64 arrays behind a JSON header.

    The file holds an 8-byte little-endian header length, the UTF-8 JSON header
    (format, version, config, and ``name, rows, cols, offset`` of every array) and
    the concatenated array data. Adam moments are stored as ``adam.m.<name>`` and
    ``adam.v.<name>``, the best parameters of a training run as ``best.<name>``.
    """
    arrays = {k: v.values for k, v in params.items()}
    if optimizer_state is not None:
        arrays.update({f"adam.m.{k}": v for k, v in optimizer_state.m.items()})
        arrays.update({f"adam.v.{k}": v for k, v in optimizer_state.v.items()})
    if best_params is not None:
        arrays.update({f"best.{k}": v.values for k, v in best_params.items()})

    entries, chunks, offset = [], [], 0
    for name, values in arrays.items():
        data = np.ascontiguousarray(values, dtype="<f8").tobytes()
        rows, cols = np.shape(values)
        entries.append({"name": name, "rows": rows, "cols": cols, "offset": offset})
        chunks.append(data)
        offset += len(data)

    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "arrays": entries,
        "adam_step": None if optimizer_state is None else int(optimizer_state.step),
        "rng_state": rng_state,
        "metadata": metadata or {},
    }
    encoded = json.dumps(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(encoded)))
        f.write(encoded)
        for chunk in chunks:
            f.write(chunk)
    return path


def load_checkpoint(path: Union[str, os.PathLike]) -> Checkpoint:
    """
    Read a file written by :func:`save_checkpoint`.

    Raises
    ------
    DataError
        If the file is truncated or not a checkpoint.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Could not read checkpoint {path}: {e}")
    if len(raw) < 8:
        raise DataError(f"{path} is not a checkpoint: file too short.")
    (header_len,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path} is not a checkpoint: unreadable header.")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a checkpoint: unknown format {header.get('format')!r}.")

    data = raw[8 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        count = entry["rows"] * entry["cols"]
        if entry["offset"] + 8 * count > len(data):
            raise DataError(f"{path}: array {entry['name']!r} is truncated.")
        values = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = values.reshape(entry["rows"], entry["cols"]).astype(np.float64)

    config = ModelConfig.from_dict(header["config"])
    params = ModelParams(
        {k: v for k, v in arrays.items() if not k.startswith(("adam.", "best."))}
    )
    params.check_compatible(config)
    best_params = None
    if any(k.startswith("best.") for k in arrays):
        best_params = ModelParams(
            {k[len("best.") :]: v for k, v in arrays.items() if k.startswith("best.")}
        )
        best_params.check_compatible(config)
    optimizer_state = None
    if header.get("adam_step") is not None:
        optimizer_state = AdamState(
            step=int(header["adam_step"]),
            m={k: arrays[f"adam.m.{k}"] for k in params},
            v={k: arrays[f"adam.v.{k}"] for k in params},
        )
    return Checkpoint(
        params,
        config,
        optimizer_state,
        header.get("rng_state"),
        header.get("metadata"),
        best_params,
    )

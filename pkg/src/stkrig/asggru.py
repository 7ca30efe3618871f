"""
Long-term component: inductive adaptive adjacency and the skip graph GRU.

The recurrent unit connects states ``T_k`` frames apart, so a window of length ``T``
is covered in ``(T - 1) // T_k + 1`` steps. At every step an input-dependent
adjacency is generated from the current frame and the previous hidden state and
used, next to the distance-based adjacency, in the gate convolutions.
"""

from __future__ import annotations

from typing import List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from . import validation
from .exceptions import ConfigError, ShapeError
from .graph import adaptive_graph_conv, graph_conv
from .jstgat import ParamSpec

__all__ = [
    "GeneratorParams",
    "GateParams",
    "AsgGruParams",
    "RecurrentState",
    "StepRecord",
    "param_specs",
    "adjacency_from_embeddings",
    "adaptive_adjacency",
    "gru_step",
    "long_term_head",
    "unroll_steps",
    "unroll_states",
    "unroll",
]

ADAPTIVE_NORMS = ("none", "row")
GATES = ("r", "u", "c")

Matrix = Union[NDArray, ad.DiffMatrix]


def __dir__() -> list[str]:
    return __all__


class GeneratorParams(NamedTuple):
    """One node-embedding encoder of the adaptive adjacency generator.

    ``theta_p[l]`` (and ``theta_pb[l]`` on directed graphs) map the ``D + F``
    concatenated channels to ``F``; ``fc_W``, ``fc_b`` form the node-feature map.
    """

    theta_p: List[ad.DiffMatrix]
    theta_pb: Optional[List[ad.DiffMatrix]]
    fc_W: ad.DiffMatrix
    fc_b: ad.DiffMatrix


class GateParams(NamedTuple):
    """Adaptive graph convolution weights and bias of one GRU gate."""

    W_p: List[ad.DiffMatrix]
    W_d: List[ad.DiffMatrix]
    W_pb: Optional[List[ad.DiffMatrix]]
    b: ad.DiffMatrix


class AsgGruParams(NamedTuple):
    """Learnable matrices of the long-term component plus the saturation rate."""

    gen1: GeneratorParams
    gen2: GeneratorParams
    gate_r: GateParams
    gate_u: GateParams
    gate_c: GateParams
    W_fl: ad.DiffMatrix
    b_fl: ad.DiffMatrix
    alpha: float = 2.0

    @property
    def hidden(self) -> int:
        return self.W_fl.rows

    @classmethod
    def from_params(
        cls,
        params: Mapping[str, ad.DiffMatrix],
        n_layers: int,
        directed: bool,
        alpha: float = 2.0,
        prefix: str = "asggru",
    ) -> "AsgGruParams":
        """Collect the long-term matrices from a flat name -> matrix mapping."""

        def stack(name):
            return [params[f"{name}.{layer}"] for layer in range(n_layers)]

        def generator(name):
            return GeneratorParams(
                theta_p=stack(f"{prefix}.{name}.theta_p"),
                theta_pb=stack(f"{prefix}.{name}.theta_pb") if directed else None,
                fc_W=params[f"{prefix}.{name}.fc.W"],
                fc_b=params[f"{prefix}.{name}.fc.b"],
            )

        def gate(name):
            return GateParams(
                W_p=stack(f"{prefix}.gate_{name}.W_p"),
                W_d=stack(f"{prefix}.gate_{name}.W_d"),
                W_pb=stack(f"{prefix}.gate_{name}.W_pb") if directed else None,
                b=params[f"{prefix}.gate_{name}.b"],
            )

        return cls(
            gen1=generator("gen1"),
            gen2=generator("gen2"),
            gate_r=gate("r"),
            gate_u=gate("u"),
            gate_c=gate("c"),
            W_fl=params[f"{prefix}.head.W_fl"],
            b_fl=params[f"{prefix}.head.b_fl"],
            alpha=alpha,
        )


class RecurrentState(NamedTuple):
    """Hidden state ``H`` (``N x F``) reached at frame ``step_time`` of the window."""

    H: ad.DiffMatrix
    step_time: int


class StepRecord(NamedTuple):
    """State after one recurrent step and the adaptive adjacency it used."""

    state: RecurrentState
    adaptive_adj: ad.DiffMatrix


def param_specs(
    n_features: int, hidden: int, n_layers: int, directed: bool, prefix: str = "asggru"
) -> dict:
    """Name -> :class:`~stkrig.jstgat.ParamSpec` of every long-term matrix."""
    channels = n_features + hidden
    specs = {}
    for gen in ("gen1", "gen2"):
        for layer in range(n_layers):
            specs[f"{prefix}.{gen}.theta_p.{layer}"] = ParamSpec(channels, hidden)
            if directed:
                specs[f"{prefix}.{gen}.theta_pb.{layer}"] = ParamSpec(channels, hidden)
        specs[f"{prefix}.{gen}.fc.W"] = ParamSpec(n_features, hidden)
        specs[f"{prefix}.{gen}.fc.b"] = ParamSpec(1, hidden, is_bias=True)
    for gate in GATES:
        for layer in range(n_layers):
            specs[f"{prefix}.gate_{gate}.W_p.{layer}"] = ParamSpec(channels, hidden)
            specs[f"{prefix}.gate_{gate}.W_d.{layer}"] = ParamSpec(channels, hidden)
            if directed:
                specs[f"{prefix}.gate_{gate}.W_pb.{layer}"] = ParamSpec(channels, hidden)
        specs[f"{prefix}.gate_{gate}.b"] = ParamSpec(1, hidden, is_bias=True)
    specs[f"{prefix}.head.W_fl"] = ParamSpec(hidden, n_features)
    specs[f"{prefix}.head.b_fl"] = ParamSpec(1, n_features, is_bias=True)
    return specs


def _as_matrix(x: Matrix) -> ad.DiffMatrix:
    return x if isinstance(x, ad.DiffMatrix) else ad.constant(x)


def _split_adjacencies(adjacencies: Sequence[Matrix]):
    if len(adjacencies) not in (1, 2):
        raise ShapeError(
            f"Expected one or two adjacency directions, got {len(adjacencies)}."
        )
    adj = adjacencies[0]
    adj_bwd = adjacencies[1] if len(adjacencies) == 2 else None
    return adj, adj_bwd


def adjacency_from_embeddings(
    m1: ad.DiffMatrix, m2: ad.DiffMatrix, alpha: float = 2.0, adaptive_norm: str = "row"
) -> ad.DiffMatrix:
    """
    ``relu(tanh(alpha * (M1 M2^T - M2 M1^T)))``, optionally row-normalized.

    The pre-activation is antisymmetric, so the result never holds both ``(i, j)``
    and ``(j, i)`` and its diagonal is zero.

    Examples
    --------
    >>> import numpy as np
    >>> from stkrig import autodiff as ad
    >>> m1 = ad.constant([[1.0], [0.0]])
    >>> m2 = ad.constant([[0.0], [1.0]])
    >>> np.round(adjacency_from_embeddings(m1, m2, adaptive_norm="none").values, 6)
    array([[0.      , 0.964028],
           [0.      , 0.      ]])
    """
    alpha = validation.check_positive(alpha, "alpha")
    adaptive_norm = validation.check_choice(adaptive_norm, "adaptive_norm", ADAPTIVE_NORMS)
    if m1.shape != m2.shape:
        raise ShapeError(
            f"adaptive adjacency: embeddings have shapes {m1.shape} and {m2.shape}."
        )
    product = ad.matmul(m1, ad.transpose(m2))
    # P - P^T is exactly antisymmetric in floating point
    scores = ad.scale(ad.sub(product, ad.transpose(product)), alpha)
    adj = ad.relu(ad.tanh(scores))
    if adaptive_norm == "row":
        adj = ad.normalize_rows(adj)
    return adj


def _node_embedding(
    xh: ad.DiffMatrix,
    x: ad.DiffMatrix,
    adj: Matrix,
    adj_bwd: Optional[Matrix],
    params: GeneratorParams,
) -> ad.DiffMatrix:
    conv = graph_conv(xh, adj, params.theta_p, activation=None)
    if adj_bwd is not None:
        if params.theta_pb is None:
            raise ShapeError("Directed graph given but the generator has no reverse weights.")
        conv = ad.add(conv, graph_conv(xh, adj_bwd, params.theta_pb, activation=None))
    features = ad.add_row(ad.matmul(x, params.fc_W), params.fc_b)
    return ad.tanh(ad.hadamard(conv, features))


def adaptive_adjacency(
    x_t: Matrix,
    h_prev: Matrix,
    adjacencies: Sequence[Matrix],
    params: AsgGruParams,
    adaptive_norm: str = "row",
) -> ad.DiffMatrix:
    """
    Input-dependent adjacency generated from the current frame and hidden state.

    ``M^k = tanh(Theta_k * G(X_t | H, A) ⊙ FC_k(X_t))`` for ``k = 1, 2``, followed by
    :func:`adjacency_from_embeddings`.

    Parameters
    ----------
    x_t :
        ``N x D`` input frame.
    h_prev :
        ``N x F`` hidden state of the previous step (zeros at the first step).
    adjacencies :
        ``[adj_fwd]`` or ``[adj_fwd, adj_bwd]``.
    params :
        Long-term parameters.
    adaptive_norm :
        ``"row"`` to row-normalize the result, ``"none"`` to keep it raw.
    """
    x = _as_matrix(x_t)
    h = _as_matrix(h_prev)
    if x.rows != h.rows:
        raise ShapeError(f"adaptive adjacency: input {x.shape} and state {h.shape} differ in N.")
    adj, adj_bwd = _split_adjacencies(adjacencies)
    xh = ad.concat_cols(x, h)
    m1 = _node_embedding(xh, x, adj, adj_bwd, params.gen1)
    m2 = _node_embedding(xh, x, adj, adj_bwd, params.gen2)
    return adjacency_from_embeddings(m1, m2, alpha=params.alpha, adaptive_norm=adaptive_norm)


def _gate(
    xh: ad.DiffMatrix,
    adj: Matrix,
    adj_bwd: Optional[Matrix],
    adaptive_adj: ad.DiffMatrix,
    params: GateParams,
) -> ad.DiffMatrix:
    if adj_bwd is not None and params.W_pb is None:
        raise ShapeError("Directed graph given but the gate has no reverse weights.")
    conv = adaptive_graph_conv(
        xh,
        adj,
        adaptive_adj,
        params.W_p,
        params.W_d,
        activation=None,
        adj_bwd=adj_bwd,
        weights_pb=params.W_pb if adj_bwd is not None else None,
    )
    return ad.add_row(conv, params.b)


def gru_step(
    x_t: Matrix,
    h_prev: Matrix,
    adjacencies: Sequence[Matrix],
    adaptive_adj: ad.DiffMatrix,
    params: AsgGruParams,
    step_time: int = 0,
) -> RecurrentState:
    """
    One skip graph GRU step.

    ``r, u = sigmoid(Theta * G(X_t | H, A, Â) + b)``,
    ``c = tanh(Theta_c * G(X_t | r ⊙ H, A, Â) + b_c)`` and
    ``H_t = u ⊙ H + (1 - u) ⊙ c``.
    """
    x = _as_matrix(x_t)
    h = _as_matrix(h_prev)
    if x.rows != h.rows or h.cols != params.hidden:
        raise ShapeError(
            f"gru_step: input {x.shape} and state {h.shape} are inconsistent "
            f"with hidden size {params.hidden}."
        )
    adj, adj_bwd = _split_adjacencies(adjacencies)
    xh = ad.concat_cols(x, h)
    r = ad.sigmoid(_gate(xh, adj, adj_bwd, adaptive_adj, params.gate_r))
    u = ad.sigmoid(_gate(xh, adj, adj_bwd, adaptive_adj, params.gate_u))
    xrh = ad.concat_cols(x, ad.hadamard(r, h))
    c = ad.tanh(_gate(xrh, adj, adj_bwd, adaptive_adj, params.gate_c))
    h_new = ad.add(c, ad.hadamard(u, ad.sub(h, c)))
    return RecurrentState(h_new, int(step_time))


def long_term_head(h_T: ad.DiffMatrix, params: AsgGruParams) -> ad.DiffMatrix:
    """Affine output ``H_T W_fl + b_fl``."""
    if h_T.cols != params.W_fl.rows:
        raise ShapeError(
            f"long_term_head: state {h_T.shape} does not match W_fl {params.W_fl.shape}."
        )
    return ad.add_row(ad.matmul(h_T, params.W_fl), params.b_fl)


def unroll_steps(window_length: int, skip: int) -> List[int]:
    """
    Frame indices visited by the recurrent unit, anchored at the last frame.

    Examples
    --------
    >>> unroll_steps(25, 4)
    [0, 4, 8, 12, 16, 20, 24]
    >>> unroll_steps(9, 8)
    [0, 8]
    """
    window_length = validation.check_integer(window_length, "T", minimum=1)
    skip = validation.check_integer(skip, "T_k", minimum=1)
    if window_length == 1:
        return [0]
    if skip >= window_length:
        raise ConfigError(f"T_k={skip} must be smaller than the window length T={window_length}.")
    return list(range(window_length - 1, -1, -skip))[::-1]


def unroll_states(
    frames: Union[NDArray, Sequence[Matrix]],
    short_term_out: Optional[ad.DiffMatrix],
    adjacencies: Sequence[Matrix],
    params: AsgGruParams,
    skip: int,
    adaptive_norm: str = "row",
) -> List[StepRecord]:
    """
    Run the skip GRU over a pseudo-filled window.

    Parameters
    ----------
    frames :
        ``T`` frames of shape ``N x D``, oldest to newest, unknown rows already filled.
    short_term_out :
        Replaces the input of the final step; None keeps the last frame.
    adjacencies :
        ``[adj_fwd]`` or ``[adj_fwd, adj_bwd]``.
    skip :
        ``T_k``.

    Returns
    -------
    :
        One :class:`StepRecord` per visited frame.
    """
    steps = unroll_steps(len(frames), skip)
    first = _as_matrix(frames[0])
    h = ad.constant(np.zeros((first.rows, params.hidden)))
    records = []
    for t in steps:
        x = _as_matrix(frames[t])
        if t == steps[-1] and short_term_out is not None:
            if short_term_out.shape != x.shape:
                raise ShapeError(
                    f"unroll: short-term output {short_term_out.shape} does not match "
                    f"frame {x.shape}."
                )
            x = short_term_out
        adaptive = adaptive_adjacency(x, h, adjacencies, params, adaptive_norm=adaptive_norm)
        state = gru_step(x, h, adjacencies, adaptive, params, step_time=t)
        records.append(StepRecord(state, adaptive))
        h = state.H
    return records


def unroll(
    frames: Union[NDArray, Sequence[Matrix]],
    short_term_out: Optional[ad.DiffMatrix],
    adjacencies: Sequence[Matrix],
    params: AsgGruParams,
    skip: int,
    adaptive_norm: str = "row",
) -> ad.DiffMatrix:
    """Long-term inference ``N x D`` of the last frame of ``frames``."""
    records = unroll_states(
        frames, short_term_out, adjacencies, params, skip, adaptive_norm=adaptive_norm
    )
    return long_term_head(records[-1].state.H, params)

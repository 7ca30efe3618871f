"""
Short-term component: joint spatiotemporal graph attention network.

The target frame attends to every node of each of its ``T_s`` preceding frames (and
to itself), the resulting maps are rescaled by a temporal decay, and an
attention-modulated graph convolution produces the short-term inference.
"""

from __future__ import annotations

from typing import List, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from .exceptions import ConfigError, ShapeError
from .pseudo import PseudoFrame

__all__ = [
    "ParamSpec",
    "AttentionParams",
    "JstGatParams",
    "AttentionMaps",
    "param_specs",
    "attention_scores",
    "attention_maps",
    "rescale_maps",
    "joint_st_conv",
    "short_term_head",
    "short_term_forward",
]

DIRECTIONS = ("fwd", "bwd")

Frame = Union[NDArray, PseudoFrame, ad.DiffMatrix]


def __dir__() -> list[str]:
    return __all__


class ParamSpec(NamedTuple):
    """Shape and initialization role of a learnable matrix."""

    rows: int
    cols: int
    is_bias: bool = False

    @property
    def shape(self):
        return (self.rows, self.cols)


class AttentionParams(NamedTuple):
    """Parameters of one additive attention module.

    ``W_a``, ``U_a`` are ``D x F``, ``v_a`` is ``F x 1`` and ``b_a`` is ``1 x F``.
    """

    W_a: ad.DiffMatrix
    U_a: ad.DiffMatrix
    v_a: ad.DiffMatrix
    b_a: ad.DiffMatrix


class JstGatParams(NamedTuple):
    """Learnable matrices of the short-term component.

    Attributes
    ----------
    attention :
        One :class:`AttentionParams` per direction.
    W_s :
        ``W_s[direction][layer]``, each ``D x F``.
    b_s :
        ``b_s[direction][layer]``, each ``1 x F``.
    W_fs, b_fs :
        Output head, ``F x D`` and ``1 x D``.
    """

    attention: List[AttentionParams]
    W_s: List[List[ad.DiffMatrix]]
    b_s: List[List[ad.DiffMatrix]]
    W_fs: ad.DiffMatrix
    b_fs: ad.DiffMatrix

    @property
    def n_layers(self) -> int:
        return len(self.b_s[0])

    @classmethod
    def from_params(
        cls,
        params: Mapping[str, ad.DiffMatrix],
        n_layers: int,
        directed: bool,
        prefix: str = "jstgat",
    ) -> "JstGatParams":
        """Collect the short-term matrices from a flat name -> matrix mapping."""
        directions = DIRECTIONS if directed else DIRECTIONS[:1]
        attention = [
            AttentionParams(
                *(params[f"{prefix}.attn.{d}.{n}"] for n in ("W_a", "U_a", "v_a", "b_a"))
            )
            for d in directions
        ]
        W_s = [
            [params[f"{prefix}.conv.{d}.W_s.{layer}"] for layer in range(n_layers)]
            for d in directions
        ]
        b_s = [
            [params[f"{prefix}.conv.{d}.b_s.{layer}"] for layer in range(n_layers)]
            for d in directions
        ]
        return cls(attention, W_s, b_s, params[f"{prefix}.head.W_fs"], params[f"{prefix}.head.b_fs"])


class AttentionMaps(NamedTuple):
    """Joint spatiotemporal attention maps of one window.

    Row ``i`` of every map is sensor ``i`` at the target time, column ``j`` is
    sensor ``j`` at the historical frame.

    Attributes
    ----------
    maps :
        ``T_s + 1`` matrices ``N x N``, ordered oldest to newest (the last one is
        the within-target-frame map).
    frame_offsets :
        Offset of each map from the target frame, ``T_s, ..., 0``.
    maps_bwd :
        Maps of the reverse direction on directed graphs.
    rescaled :
        Whether the temporal decay was applied.
    """

    maps: List[ad.DiffMatrix]
    frame_offsets: List[int]
    maps_bwd: Optional[List[ad.DiffMatrix]] = None
    rescaled: bool = False

    def directions(self) -> List[List[ad.DiffMatrix]]:
        return [self.maps] if self.maps_bwd is None else [self.maps, self.maps_bwd]


def param_specs(
    n_features: int, hidden: int, n_layers: int, directed: bool, prefix: str = "jstgat"
) -> dict:
    """Name -> :class:`ParamSpec` of every short-term matrix."""
    specs = {}
    directions = DIRECTIONS if directed else DIRECTIONS[:1]
    for d in directions:
        specs[f"{prefix}.attn.{d}.W_a"] = ParamSpec(n_features, hidden)
        specs[f"{prefix}.attn.{d}.U_a"] = ParamSpec(n_features, hidden)
        specs[f"{prefix}.attn.{d}.v_a"] = ParamSpec(hidden, 1)
        specs[f"{prefix}.attn.{d}.b_a"] = ParamSpec(1, hidden, is_bias=True)
        for layer in range(n_layers):
            specs[f"{prefix}.conv.{d}.W_s.{layer}"] = ParamSpec(n_features, hidden)
            specs[f"{prefix}.conv.{d}.b_s.{layer}"] = ParamSpec(1, hidden, is_bias=True)
    specs[f"{prefix}.head.W_fs"] = ParamSpec(hidden, n_features)
    specs[f"{prefix}.head.b_fs"] = ParamSpec(1, n_features, is_bias=True)
    return specs


def _as_frame(frame: Frame) -> ad.DiffMatrix:
    if isinstance(frame, ad.DiffMatrix):
        return frame
    if isinstance(frame, PseudoFrame):
        frame = frame.values
    return ad.constant(frame)


def attention_scores(
    target_frame: Frame, neighbor_frame: Frame, params: AttentionParams
) -> ad.DiffMatrix:
    """
    Row-stochastic attention of target-time sensors over a neighbor frame.

    ``e_ij = v_a^T tanh(x_T^i W_a + x_t^j U_a + b_a)``, softmax-normalized over ``j``.

    Parameters
    ----------
    target_frame, neighbor_frame :
        ``N x D`` readings; pass the target frame twice for within-frame attention.
    params :
        Attention parameters, shared across all frames.

    Raises
    ------
    ShapeError
        If the frames differ in shape.
    """
    target = _as_frame(target_frame)
    neighbor = _as_frame(neighbor_frame)
    if target.shape != neighbor.shape:
        raise ShapeError(
            f"attention_scores: target frame {target.shape} and neighbor frame "
            f"{neighbor.shape} differ."
        )
    n = target.rows
    query = ad.matmul(target, params.W_a)
    key = ad.matmul(neighbor, params.U_a)
    # row i * n + j pairs target sensor i with neighbor sensor j
    pairs = ad.add(ad.repeat_rows(query, n), ad.tile_rows(key, n))
    hidden = ad.tanh(ad.add_row(pairs, params.b_a))
    scores = ad.reshape(ad.matmul(hidden, params.v_a), n, n)
    return ad.softmax_rows(scores)


def attention_maps(frames: Sequence[Frame], params: JstGatParams) -> AttentionMaps:
    """
    Attention maps of the target frame (last of ``frames``) over every frame.

    ``frames`` are ordered oldest to newest; the map for the target frame itself is
    the within-target-graph attention.
    """
    if len(frames) < 1:
        raise ShapeError("attention_maps requires at least the target frame.")
    target = _as_frame(frames[-1])
    offsets = list(range(len(frames) - 1, -1, -1))
    per_direction = [
        [attention_scores(target, frame, attn) for frame in frames]
        for attn in params.attention
    ]
    return AttentionMaps(
        maps=per_direction[0],
        frame_offsets=offsets,
        maps_bwd=per_direction[1] if len(per_direction) > 1 else None,
    )


def rescale_maps(maps: AttentionMaps, lam: float) -> AttentionMaps:
    """
    Multiply the map at offset ``m`` by ``exp(-m * lam)``.

    Applied to the already softmax-normalized maps, so the row sums of the map at
    offset ``m`` become ``exp(-m * lam)``.

    Examples
    --------
    >>> import numpy as np
    >>> from stkrig import autodiff as ad
    >>> maps = AttentionMaps([ad.constant(np.full((2, 2), 0.5))] * 2, [1, 0])
    >>> [m.values.sum(axis=1)[0] for m in rescale_maps(maps, 1.0).maps]
    [0.36787944117144233, 1.0]
    """
    factors = [float(np.exp(-m * lam)) for m in maps.frame_offsets]

    def _scaled(matrices):
        if matrices is None:
            return None
        return [ad.scale(e, f) for e, f in zip(matrices, factors)]

    return AttentionMaps(
        maps=_scaled(maps.maps),
        frame_offsets=list(maps.frame_offsets),
        maps_bwd=_scaled(maps.maps_bwd),
        rescaled=True,
    )


def joint_st_conv(
    frames: Sequence[Frame],
    maps: AttentionMaps,
    adjacencies: Sequence[NDArray],
    params: JstGatParams,
    gamma: float = 0.1,
    mu: float = 0.9,
    n_layers: Optional[int] = None,
) -> ad.DiffMatrix:
    """
    Attention-modulated graph convolution over the short-term frames.

    For each frame ``t`` and direction, ``Z^0 = X_t`` and
    ``Z^l = gamma X_t + mu (E_t ⊙ A) Z^{l-1}``; the output is
    ``sum_t relu(sum_l Z^l W_s^l + b_s^l)`` with the directions, each with its own
    weights and biases, summed inside the activation.

    Parameters
    ----------
    frames :
        ``T_s + 1`` pseudo-filled ``N x D`` frames, oldest to newest.
    maps :
        Rescaled attention maps, one per frame (and per direction).
    adjacencies :
        Normalized adjacency per direction.
    n_layers :
        Number of propagation orders ``L``; defaults to ``params.n_layers``.

    Raises
    ------
    ConfigError
        If ``L < 1`` or ``L`` exceeds the available layer weights.
    ShapeError
        If the number of maps, frames or directions disagree.
    """
    n_layers = params.n_layers if n_layers is None else n_layers
    if n_layers < 1:
        raise ConfigError("joint_st_conv requires at least one layer (L >= 1).")
    if n_layers > params.n_layers:
        raise ConfigError(
            f"joint_st_conv: L={n_layers} exceeds the {params.n_layers} available layers."
        )
    directions = maps.directions()
    if len(directions) != len(adjacencies) or len(directions) != len(params.W_s):
        raise ShapeError(
            f"joint_st_conv: {len(directions)} attention directions, "
            f"{len(adjacencies)} adjacencies and {len(params.W_s)} weight sets."
        )
    if any(len(d) != len(frames) for d in directions):
        raise ShapeError(
            f"joint_st_conv: {len(frames)} frames but {len(directions[0])} attention maps."
        )

    out = None
    for t, frame in enumerate(frames):
        x = _as_frame(frame)
        residual = ad.scale(x, gamma)
        inner = None
        for maps_d, adj, weights, biases in zip(directions, adjacencies, params.W_s, params.b_s):
            if maps_d[t].shape != (x.rows, x.rows):
                raise ShapeError(
                    f"joint_st_conv: attention map {maps_d[t].shape} does not match frame {x.shape}."
                )
            propagation = ad.hadamard(maps_d[t], ad.constant(adj))
            z = x
            for layer in range(n_layers):
                z = ad.add(residual, ad.scale(ad.matmul(propagation, z), mu))
                term = ad.matmul(z, weights[layer])
                inner = term if inner is None else ad.add(inner, term)
            for layer in range(n_layers):
                inner = ad.add_row(inner, biases[layer])
        activated = ad.relu(inner)
        out = activated if out is None else ad.add(out, activated)
    return out


def short_term_head(z_out: ad.DiffMatrix, params: JstGatParams) -> ad.DiffMatrix:
    """Affine output ``Z_out W_fs + b_fs``."""
    if z_out.cols != params.W_fs.rows:
        raise ShapeError(
            f"short_term_head: features {z_out.shape} do not match W_fs {params.W_fs.shape}."
        )
    return ad.add_row(ad.matmul(z_out, params.W_fs), params.b_fs)


def short_term_forward(
    frames: Sequence[Frame],
    adjacencies: Sequence[NDArray],
    params: JstGatParams,
    gamma: float = 0.1,
    mu: float = 0.9,
    lam: float = 1.0,
):
    """
    Short-term inference of the target frame (the last of ``frames``).

    Returns
    -------
    short :
        ``N x D`` short-term output for every node.
    maps :
        The rescaled attention maps.
    """
    maps = rescale_maps(attention_maps(frames, params), lam)
    z_out = joint_st_conv(frames, maps, adjacencies, params, gamma=gamma, mu=mu)
    return short_term_head(z_out, params), maps

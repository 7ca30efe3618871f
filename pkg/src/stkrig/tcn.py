"""
Short-term component of the ``temporal_conv`` variant: gated temporal convolution.

A gated convolution spanning the ``T_s + 1`` short-term frames replaces the joint
spatiotemporal attention, and a diffusion graph convolution with a residual
connection mixes the result across sensors, in the manner of Graph WaveNet. No
attention map is produced.
"""

from __future__ import annotations

from typing import List, Mapping, NamedTuple, Sequence, Union

from numpy.typing import NDArray

from . import autodiff as ad
from .exceptions import ConfigError, ShapeError
from .graph import graph_conv
from .jstgat import DIRECTIONS, ParamSpec
from .pseudo import PseudoFrame

__all__ = [
    "TemporalConvParams",
    "param_specs",
    "gated_temporal_conv",
    "diffusion_block",
    "temporal_conv_head",
    "temporal_conv_forward",
]

Frame = Union[NDArray, PseudoFrame, ad.DiffMatrix]


def __dir__() -> list[str]:
    return __all__


class TemporalConvParams(NamedTuple):
    """Learnable matrices of the gated temporal convolution branch.

    Attributes
    ----------
    W_filter, W_gate :
        One ``D x F`` kernel slice per frame, ordered oldest to newest.
    b_filter, b_gate :
        ``1 x F`` biases of the filter and gate.
    W_g :
        ``W_g[direction][order]``, each ``F x F``.
    b_g :
        ``1 x F`` bias of the graph convolution.
    W_ft, b_ft :
        Output head, ``F x D`` and ``1 x D``.
    """

    W_filter: List[ad.DiffMatrix]
    W_gate: List[ad.DiffMatrix]
    b_filter: ad.DiffMatrix
    b_gate: ad.DiffMatrix
    W_g: List[List[ad.DiffMatrix]]
    b_g: ad.DiffMatrix
    W_ft: ad.DiffMatrix
    b_ft: ad.DiffMatrix

    @property
    def kernel_size(self) -> int:
        return len(self.W_filter)

    @classmethod
    def from_params(
        cls,
        params: Mapping[str, ad.DiffMatrix],
        T_s: int,
        n_layers: int,
        directed: bool,
        prefix: str = "tcn",
    ) -> "TemporalConvParams":
        """Collect the branch matrices from a flat name -> matrix mapping."""
        directions = DIRECTIONS if directed else DIRECTIONS[:1]
        # kernel slices are named by their offset from the target frame
        offsets = range(T_s, -1, -1)
        return cls(
            W_filter=[params[f"{prefix}.temporal.filter.W.{m}"] for m in offsets],
            W_gate=[params[f"{prefix}.temporal.gate.W.{m}"] for m in offsets],
            b_filter=params[f"{prefix}.temporal.filter.b"],
            b_gate=params[f"{prefix}.temporal.gate.b"],
            W_g=[
                [params[f"{prefix}.conv.{d}.W_g.{layer}"] for layer in range(n_layers)]
                for d in directions
            ],
            b_g=params[f"{prefix}.conv.b_g"],
            W_ft=params[f"{prefix}.head.W_ft"],
            b_ft=params[f"{prefix}.head.b_ft"],
        )


def param_specs(
    n_features: int,
    hidden: int,
    n_layers: int,
    directed: bool,
    T_s: int,
    prefix: str = "tcn",
) -> dict:
    """Name -> :class:`~stkrig.jstgat.ParamSpec` of every matrix of the branch."""
    specs = {}
    for gate in ("filter", "gate"):
        for m in range(T_s + 1):
            specs[f"{prefix}.temporal.{gate}.W.{m}"] = ParamSpec(n_features, hidden)
        specs[f"{prefix}.temporal.{gate}.b"] = ParamSpec(1, hidden, is_bias=True)
    for d in DIRECTIONS if directed else DIRECTIONS[:1]:
        for layer in range(n_layers):
            specs[f"{prefix}.conv.{d}.W_g.{layer}"] = ParamSpec(hidden, hidden)
    specs[f"{prefix}.conv.b_g"] = ParamSpec(1, hidden, is_bias=True)
    specs[f"{prefix}.head.W_ft"] = ParamSpec(hidden, n_features)
    specs[f"{prefix}.head.b_ft"] = ParamSpec(1, n_features, is_bias=True)
    return specs


def _as_frame(frame: Frame) -> ad.DiffMatrix:
    if isinstance(frame, ad.DiffMatrix):
        return frame
    if isinstance(frame, PseudoFrame):
        frame = frame.values
    return ad.constant(frame)


def _kernel_sum(frames: Sequence[ad.DiffMatrix], weights: Sequence[ad.DiffMatrix], bias):
    total = None
    for x, w in zip(frames, weights):
        term = ad.matmul(x, w)
        total = term if total is None else ad.add(total, term)
    return ad.add_row(total, bias)


def gated_temporal_conv(frames: Sequence[Frame], params: TemporalConvParams) -> ad.DiffMatrix:
    """
    ``tanh(sum_t X_t W_filter[t] + b_filter) ⊙ sigmoid(sum_t X_t W_gate[t] + b_gate)``.

    The kernel spans all frames and yields one ``N x F`` output at the target
    (last) frame.

    Raises
    ------
    ShapeError
        If the number of frames differs from the kernel size or the frames differ
        in shape.
    """
    if len(frames) != params.kernel_size:
        raise ShapeError(
            f"gated_temporal_conv: {len(frames)} frames but a kernel of size {params.kernel_size}."
        )
    frames = [_as_frame(f) for f in frames]
    if any(f.shape != frames[-1].shape for f in frames):
        raise ShapeError(
            f"gated_temporal_conv: frames differ in shape {[f.shape for f in frames]}."
        )
    filt = ad.tanh(_kernel_sum(frames, params.W_filter, params.b_filter))
    gate = ad.sigmoid(_kernel_sum(frames, params.W_gate, params.b_gate))
    return ad.hadamard(filt, gate)


def diffusion_block(
    h: ad.DiffMatrix, adjacencies: Sequence[NDArray], params: TemporalConvParams
) -> ad.DiffMatrix:
    """``relu(sum_d sum_l A_d^l H W_g[d][l] + b_g) + H``."""
    if len(adjacencies) != len(params.W_g):
        raise ShapeError(
            f"diffusion_block: {len(adjacencies)} adjacencies but {len(params.W_g)} weight sets."
        )
    total = None
    for adj, weights in zip(adjacencies, params.W_g):
        term = graph_conv(h, adj, weights, activation=None)
        total = term if total is None else ad.add(total, term)
    return ad.add(ad.relu(ad.add_row(total, params.b_g)), h)


def temporal_conv_head(z_out: ad.DiffMatrix, params: TemporalConvParams) -> ad.DiffMatrix:
    """Affine output ``Z_out W_ft + b_ft``."""
    if z_out.cols != params.W_ft.rows:
        raise ShapeError(
            f"temporal_conv_head: features {z_out.shape} do not match W_ft {params.W_ft.shape}."
        )
    return ad.add_row(ad.matmul(z_out, params.W_ft), params.b_ft)


def temporal_conv_forward(
    frames: Sequence[Frame],
    adjacencies: Sequence[NDArray],
    params: TemporalConvParams,
) -> ad.DiffMatrix:
    """
    Short-term inference ``N x D`` of the target frame (the last of ``frames``).

    Parameters
    ----------
    frames :
        ``T_s + 1`` pseudo-filled ``N x D`` frames, oldest to newest.
    adjacencies :
        Normalized adjacency per direction.
    params :
        Branch parameters.

    Raises
    ------
    ConfigError
        If the graph convolution has no order.
    """
    if not params.W_g or not params.W_g[0]:
        raise ConfigError("temporal_conv_forward requires at least one order (L >= 1).")
    h = gated_temporal_conv(frames, params)
    return temporal_conv_head(diffusion_block(h, adjacencies, params), params)

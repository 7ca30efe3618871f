"""
Reverse-mode automatic differentiation over dense float64 matrices.

Every learned block of the model is expressed with the primitives of this module.
Operations executed inside an active :class:`Tape` are recorded together with a
vector-Jacobian product closure; :meth:`Tape.backward` replays them in reverse order
and populates ``grad`` on every participating :class:`DiffMatrix` that requires it.

Outside of a tape the primitives simply evaluate, which is what inference uses.

Examples
--------
>>> import numpy as np
>>> from stkrig import autodiff as ad
>>> w = ad.parameter(np.array([[1.0, -2.0], [3.0, 0.5]]))
>>> with ad.Tape() as tape:
...     loss = ad.sum_all(ad.hadamard(w, w))
...     tape.backward(loss)
>>> np.allclose(w.grad, 2 * w.values)
True
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, softmax

from .exceptions import BackwardError, ShapeError

__all__ = [
    "DiffMatrix",
    "Tape",
    "parameter",
    "constant",
    "matmul",
    "add",
    "sub",
    "hadamard",
    "scale",
    "add_row",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "softmax_rows",
    "normalize_rows",
    "sum_all",
    "sum_over_axis",
    "concat_cols",
    "transpose",
    "repeat_rows",
    "tile_rows",
    "reshape",
    "backward",
    "zero_grad",
    "numerical_gradient",
    "check_gradients",
]

_NODE_IDS = itertools.count()
_STATE = threading.local()

VJP = Callable[[NDArray], Tuple[Optional[NDArray], ...]]


def __dir__() -> list[str]:
    return __all__


class DiffMatrix:
    """Dense real matrix that can take part in a recorded computation.

    Parameters
    ----------
    values :
        Array-like of numbers. Scalars become ``1 x 1`` and 1-D arrays become row
        vectors ``1 x n``.
    requires_grad :
        If True, :meth:`Tape.backward` populates :attr:`grad`.
    name :
        Optional label, used by parameters for checkpointing and error messages.
    """

    __slots__ = ("values", "grad", "requires_grad", "node_id", "name", "_tape")

    def __init__(
        self,
        values: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        copy: bool = True,
    ):
        if copy:
            values = np.array(values, dtype=np.float64)
        else:
            values = np.asarray(values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        elif values.ndim == 1:
            values = values.reshape(1, -1)
        elif values.ndim != 2:
            raise ShapeError(
                f"DiffMatrix values must be at most 2 dimensional, got shape {values.shape}."
            )
        self.values = values
        self.grad: Optional[NDArray] = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_NODE_IDS)
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self) -> "DiffMatrix":
        return transpose(self)

    def item(self) -> float:
        """Return the value of a ``1 x 1`` matrix as a float."""
        if self.shape != (1, 1):
            raise ShapeError(f"item() requires a 1 x 1 matrix, got shape {self.shape}.")
        return float(self.values[0, 0])

    def numpy(self) -> NDArray:
        """Return a copy of the values."""
        return self.values.copy()

    def detach(self) -> "DiffMatrix":
        """Return a constant sharing no history with this matrix."""
        return DiffMatrix(self.values, requires_grad=False, name=self.name)

    def __matmul__(self, other):
        return matmul(self, _as_matrix(other))

    def __add__(self, other):
        return add(self, _as_matrix(other))

    def __radd__(self, other):
        return add(_as_matrix(other), self)

    def __sub__(self, other):
        return sub(self, _as_matrix(other))

    def __rsub__(self, other):
        return sub(_as_matrix(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return hadamard(self, _as_matrix(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return (
            f"DiffMatrix{label}(shape={self.shape}, requires_grad={self.requires_grad},"
            f" node_id={self.node_id})"
        )


class _Record(NamedTuple):
    """A single recorded operation."""

    op: str
    inputs: Tuple[DiffMatrix, ...]
    output: DiffMatrix
    vjp: VJP


class Tape:
    """Ordered record of the operations of one forward pass.

    A tape is confined to the thread that opened it: the active tape is stored in
    thread-local state, so concurrent forward passes on other threads record onto
    their own tapes (or nowhere).

    Examples
    --------
    >>> import numpy as np
    >>> from stkrig import autodiff as ad
    >>> x = ad.parameter(np.zeros((1, 1)))
    >>> with ad.Tape() as tape:
    ...     y = ad.sum_all(ad.tanh(x))
    ...     tape.backward(y)
    >>> x.grad
    array([[1.]])
    """

    def __init__(self):
        self.records: List[_Record] = []
        self._backward_done = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[DiffMatrix, ...], output: DiffMatrix, vjp: VJP):
        if self._backward_done:
            raise BackwardError(
                "Cannot record on a tape after backward(); call reset() or open a new Tape."
            )
        output._tape = self
        self.records.append(_Record(op, inputs, output, vjp))

    def reset(self):
        """Forget every recorded operation and allow a new backward pass."""
        self.records = []
        self._backward_done = False

    def backward(self, loss: DiffMatrix):
        """
        Populate ``grad`` on every ``requires_grad`` participant of ``loss``.

        Gradients of leaves (matrices not produced on this tape, e.g. parameters)
        are accumulated into any existing ``grad``; use :func:`zero_grad` between
        optimizer steps.

        Raises
        ------
        BackwardError
            If ``loss`` is not ``1 x 1``, the tape is empty, ``loss`` was not
            recorded on this tape, or backward already ran on this tape.
        """
        if loss.shape != (1, 1):
            raise BackwardError(f"backward() requires a 1 x 1 loss, got shape {loss.shape}.")
        if not self.records:
            raise BackwardError("backward() called on an empty tape.")
        if self._backward_done:
            raise BackwardError(
                "backward() already ran on this tape; call reset() before reusing it."
            )
        if loss._tape is not self:
            raise BackwardError("The loss was not recorded on this tape.")
        self._backward_done = True

        loss.grad = np.ones((1, 1)) if loss.grad is None else loss.grad + 1.0
        for record in reversed(self.records):
            g = record.output.grad
            if g is None:
                continue
            for inp, gi in zip(record.inputs, record.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi


def _tape_stack() -> List[Tape]:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = _STATE.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    """Return the tape recording on the current thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: DiffMatrix):
    """Run the reverse pass of the tape ``loss`` was recorded on."""
    if loss._tape is None:
        if loss.shape != (1, 1):
            raise BackwardError(f"backward() requires a 1 x 1 loss, got shape {loss.shape}.")
        raise BackwardError(
            "backward() called on an empty tape: the loss was not computed under an active Tape."
        )
    loss._tape.backward(loss)


def zero_grad(params: Union[Mapping[str, DiffMatrix], Iterable[DiffMatrix]]):
    """Reset the gradient of every matrix in ``params``."""
    matrices = params.values() if isinstance(params, Mapping) else params
    for m in matrices:
        m.grad = None


def parameter(values: ArrayLike, name: Optional[str] = None) -> DiffMatrix:
    """Create a learnable leaf (``requires_grad=True``)."""
    return DiffMatrix(values, requires_grad=True, name=name)


def constant(values: ArrayLike, name: Optional[str] = None) -> DiffMatrix:
    """Create a constant leaf (``requires_grad=False``)."""
    return DiffMatrix(values, requires_grad=False, name=name)


def _as_matrix(x) -> DiffMatrix:
    return x if isinstance(x, DiffMatrix) else constant(x)


def _emit(op: str, value: NDArray, inputs: Tuple[DiffMatrix, ...], vjp: VJP) -> DiffMatrix:
    requires_grad = any(i.requires_grad for i in inputs)
    out = DiffMatrix(value, requires_grad=requires_grad, copy=False)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(op, inputs, out, vjp)
    return out


def _check_same_shape(op: str, a: DiffMatrix, b: DiffMatrix):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch between {a.shape} and {b.shape}.")


# --- linear algebra -----------------------------------------------------------------


def matmul(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    """Matrix product ``a @ b``."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}.")
    av, bv = a.values, b.values
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    _check_same_shape("add", a, b)
    return _emit("add", a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    _check_same_shape("sub", a, b)
    return _emit("sub", a.values - b.values, (a, b), lambda g: (g, -g))


def hadamard(a: DiffMatrix, b: DiffMatrix) -> DiffMatrix:
    """Elementwise product."""
    _check_same_shape("hadamard", a, b)
    av, bv = a.values, b.values
    return _emit("hadamard", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: DiffMatrix, factor: float) -> DiffMatrix:
    """Multiply by a (non-learnable) scalar."""
    factor = float(factor)
    return _emit("scale", a.values * factor, (a,), lambda g: (g * factor,))


def add_row(a: DiffMatrix, row: DiffMatrix) -> DiffMatrix:
    """Add a ``1 x cols`` row vector to every row of ``a`` (bias broadcast)."""
    if row.rows != 1 or row.cols != a.cols:
        raise ShapeError(f"add_row: cannot broadcast row of shape {row.shape} onto {a.shape}.")
    return _emit(
        "add_row", a.values + row.values, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True))
    )


def transpose(a: DiffMatrix) -> DiffMatrix:
    return _emit("transpose", a.values.T.copy(), (a,), lambda g: (g.T,))


# --- elementwise nonlinearities -------------------------------------------------------


def tanh(a: DiffMatrix) -> DiffMatrix:
    y = np.tanh(a.values)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: DiffMatrix) -> DiffMatrix:
    y = expit(a.values)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: DiffMatrix) -> DiffMatrix:
    positive = a.values > 0
    return _emit("relu", np.where(positive, a.values, 0.0), (a,), lambda g: (g * positive,))


def exp(a: DiffMatrix) -> DiffMatrix:
    y = np.exp(a.values)
    return _emit("exp", y, (a,), lambda g: (g * y,))


def softmax_rows(a: DiffMatrix) -> DiffMatrix:
    """Row-wise softmax."""
    if a.cols < 1:
        raise ShapeError(f"softmax_rows requires at least one column, got shape {a.shape}.")
    y = softmax(a.values, axis=1)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", y, (a,), vjp)


def normalize_rows(a: DiffMatrix) -> DiffMatrix:
    """Divide each row by its sum; rows summing to zero are left unchanged."""
    s = a.values.sum(axis=1, keepdims=True)
    safe = np.where(s == 0, 1.0, s)
    y = a.values / safe

    def vjp(g):
        return ((g - (g * y).sum(axis=1, keepdims=True)) / safe,)

    return _emit("normalize_rows", y, (a,), vjp)


# --- reductions and layout ------------------------------------------------------------


def sum_all(a: DiffMatrix) -> DiffMatrix:
    shape = a.shape
    return _emit(
        "sum_all", np.array([[a.values.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),)
    )


def sum_over_axis(a: DiffMatrix, axis: int) -> DiffMatrix:
    """Sum over rows (``axis=0``, result ``1 x cols``) or columns (``axis=1``, ``rows x 1``)."""
    if axis not in (0, 1):
        raise ShapeError(f"sum_over_axis: axis must be 0 or 1, got {axis}.")
    shape = a.shape
    return _emit(
        "sum_over_axis",
        a.values.sum(axis=axis, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
    )


def concat_cols(*matrices: DiffMatrix) -> DiffMatrix:
    """Column-wise concatenation ``[a | b | ...]``."""
    if not matrices:
        raise ShapeError("concat_cols requires at least one matrix.")
    rows = {m.rows for m in matrices}
    if len(rows) != 1:
        raise ShapeError(
            "concat_cols: row mismatch between shapes "
            + ", ".join(str(m.shape) for m in matrices)
            + "."
        )
    bounds = np.cumsum([0] + [m.cols for m in matrices])

    def vjp(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _emit("concat_cols", np.hstack([m.values for m in matrices]), matrices, vjp)


def repeat_rows(a: DiffMatrix, n: int) -> DiffMatrix:
    """Repeat each row ``n`` times consecutively: row ``i`` lands on rows ``i*n .. i*n+n-1``."""
    rows, cols = a.shape
    return _emit(
        "repeat_rows",
        np.repeat(a.values, n, axis=0),
        (a,),
        lambda g: (g.reshape(rows, n, cols).sum(axis=1),),
    )


def tile_rows(a: DiffMatrix, n: int) -> DiffMatrix:
    """Stack ``n`` copies of ``a`` vertically."""
    rows, cols = a.shape
    return _emit(
        "tile_rows",
        np.tile(a.values, (n, 1)),
        (a,),
        lambda g: (g.reshape(n, rows, cols).sum(axis=0),),
    )


def reshape(a: DiffMatrix, rows: int, cols: int) -> DiffMatrix:
    """Row-major reshape."""
    if rows * cols != a.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {(rows, cols)}.")
    shape = a.shape
    return _emit(
        "reshape", a.values.reshape(rows, cols).copy(), (a,), lambda g: (g.reshape(shape),)
    )


# --- gradient verification ------------------------------------------------------------


class GradientCheck(NamedTuple):
    """Outcome of comparing analytic and central finite-difference gradients."""

    analytic: Dict[str, NDArray]
    numeric: Dict[str, NDArray]
    max_abs_error: float
    max_rel_error: float
    passed: bool


def numerical_gradient(
    fn: Callable[[], DiffMatrix], param: DiffMatrix, h: float = 1e-6
) -> NDArray:
    """
    Central finite-difference gradient of the scalar ``fn()`` w.r.t. ``param``.

    The step for entry ``x`` is ``h * max(1, |x|)``. ``param.values`` is perturbed
    in place and restored.
    """
    grad = np.zeros_like(param.values)
    for idx in np.ndindex(*param.shape):
        x = param.values[idx]
        step = h * max(1.0, abs(x))
        param.values[idx] = x + step
        f_plus = fn().item()
        param.values[idx] = x - step
        f_minus = fn().item()
        param.values[idx] = x
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def check_gradients(
    fn: Callable[[], DiffMatrix],
    params: Union[Mapping[str, DiffMatrix], Iterable[DiffMatrix]],
    h: float = 1e-6,
    rtol: float = 1e-4,
    atol: float = 1e-8,
) -> GradientCheck:
    """
    Compare tape gradients of ``fn()`` with central finite differences.

    Entries agree when ``|analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|)``.

    Parameters
    ----------
    fn :
        Zero-argument callable building a ``1 x 1`` loss from the current parameter values.
    params :
        Parameters to check, as a mapping ``name -> DiffMatrix`` or an iterable.
    """
    if not isinstance(params, Mapping):
        params = {p.name or f"param_{i}": p for i, p in enumerate(params)}
    zero_grad(params)
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        for k, p in params.items()
    }
    numeric = {k: numerical_gradient(fn, p, h=h) for k, p in params.items()}

    max_abs, max_rel, passed = 0.0, 0.0, True
    for k in params:
        diff = np.abs(analytic[k] - numeric[k])
        magnitude = np.maximum(np.abs(analytic[k]), np.abs(numeric[k]))
        if diff.size:
            max_abs = max(max_abs, float(diff.max()))
            rel = diff / np.maximum(magnitude, atol)
            max_rel = max(max_rel, float(rel.max()))
            passed = passed and bool(np.all(diff <= atol + rtol * magnitude))
    return GradientCheck(analytic, numeric, max_abs, max_rel, passed)

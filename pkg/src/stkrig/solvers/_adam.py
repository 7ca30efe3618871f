from typing import Callable, Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .. import autodiff as ad
from .. import validation
from ..exceptions import BackwardError, NumericalError


class AdamState(NamedTuple):
    """
    Optimizer state for Adam.

    Attributes
    ----------
    step :
        Number of updates performed so far.
    m :
        First-moment estimate per parameter name.
    v :
        Second-moment estimate per parameter name.
    """

    step: int
    m: Dict[str, NDArray]
    v: Dict[str, NDArray]


def global_norm(grads: Mapping[str, NDArray]) -> float:
    """Euclidean norm of all gradients taken together."""
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


class Adam:
    """
    Adam with bias-corrected moment estimates.

    Parameters are the ``name -> DiffMatrix`` mapping of a model; :meth:`update`
    reads the gradients left on them by a backward pass and modifies their values
    in place.

    Attributes
    ----------
    lr :
        Step size.
    beta1, beta2 :
        Exponential decay rates of the first and second moment estimates.
    eps :
        Added to the root of the second moment.
    clip_norm :
        If set, gradients are rescaled so that their global norm does not exceed it.
    maxiter :
        Number of updates performed by :meth:`run`.

    Examples
    --------
    >>> import numpy as np
    >>> from stkrig import autodiff as ad
    >>> w = ad.parameter(0.0, name="w")
    >>> solver = Adam(lr=0.2, beta1=0.8, maxiter=100)
    >>> params, state = solver.run(lambda: ad.hadamard(w - 3.0, w - 3.0), {"w": w})
    >>> abs(w.item() - 3.0) < 1e-3
    True
    """

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: Optional[float] = None,
        maxiter: int = 1000,
    ):
        self.lr = validation.check_positive(lr, "lr")
        self.beta1 = validation.check_positive(beta1, "beta1", strict=False)
        self.beta2 = validation.check_positive(beta2, "beta2", strict=False)
        self.eps = validation.check_positive(eps, "eps")
        self.clip_norm = (
            None if clip_norm is None else validation.check_positive(clip_norm, "clip_norm")
        )
        self.maxiter = validation.check_integer(maxiter, "maxiter", minimum=0)

    def init_state(self, params: Mapping[str, ad.DiffMatrix]) -> AdamState:
        """Zero moments for every parameter."""
        return AdamState(
            step=0,
            m={k: np.zeros_like(p.values) for k, p in params.items()},
            v={k: np.zeros_like(p.values) for k, p in params.items()},
        )

    def _collect_grads(self, params: Mapping[str, ad.DiffMatrix]) -> Dict[str, NDArray]:
        grads = {}
        for name, p in params.items():
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise BackwardError(
                    f"Parameter {name!r} has no gradient; run backward() before the update."
                )
            grads[name] = p.grad
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
            raise NumericalError(f"Non-finite gradients for parameters {bad}.")
        if self.clip_norm is not None:
            norm = global_norm(grads)
            if norm > self.clip_norm:
                factor = self.clip_norm / norm
                grads = {k: g * factor for k, g in grads.items()}
        return grads

    def update(self, params: Mapping[str, ad.DiffMatrix], state: AdamState) -> AdamState:
        """
        Apply one Adam step to ``params`` using their current gradients.

        Parameters
        ----------
        params :
            Parameters holding gradients from the last backward pass.
        state :
            State returned by :meth:`init_state` or a previous update.

        Returns
        -------
        :
            The new state; ``params`` are modified in place.

        Raises
        ------
        BackwardError
            If a parameter requiring gradients has none.
        NumericalError
            If a gradient holds NaN or Inf.
        """
        grads = self._collect_grads(params)
        step = state.step + 1
        correction1 = 1.0 - self.beta1**step
        correction2 = 1.0 - self.beta2**step
        m, v = dict(state.m), dict(state.v)
        for name, g in grads.items():
            m[name] = self.beta1 * m[name] + (1.0 - self.beta1) * g
            v[name] = self.beta2 * v[name] + (1.0 - self.beta2) * g * g
            m_hat = m[name] / correction1
            v_hat = v[name] / correction2
            p = params[name]
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return AdamState(step, m, v)

    def run(
        self,
        fun: Callable[[], ad.DiffMatrix],
        params: Mapping[str, ad.DiffMatrix],
        state: Optional[AdamState] = None,
    ) -> Tuple[Mapping[str, ad.DiffMatrix], AdamState]:
        """
        Minimize ``fun()`` for ``maxiter`` updates.

        Parameters
        ----------
        fun :
            Zero-argument callable returning a ``1 x 1`` loss computed from ``params``.
        params :
            Parameters to optimize.
        state :
            Optional state to resume from.
        """
        state = self.init_state(params) if state is None else state
        for _ in range(self.maxiter):
            ad.zero_grad(params)
            with ad.Tape() as tape:
                loss = fun()
                tape.backward(loss)
            state = self.update(params, state)
        return params, state

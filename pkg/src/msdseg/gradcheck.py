"""Finite-difference gradient oracle, independent of the tape machinery."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tape, Tensor, backward
from .errors import ArgumentError, NumericError


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between tape and central-difference gradients.

    Relative error per component is |analytic - numeric| scaled by
    max(1, |analytic|, |numeric|). `f` must map a Tensor to a scalar Tensor
    and is re-evaluated 2*size(x) times off-tape.
    """
    if eps <= 0:
        raise ArgumentError(f"eps must be positive, got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        if y.data.size != 1:
            raise ArgumentError(f"grad_check needs a scalar-valued f, got output shape {y.shape}")
        if not np.isfinite(y.data).all():
            raise NumericError("f(x) is not finite")
        grads = backward(y)
    analytic = tape.grad_of(probe, grads).data.reshape(-1)

    def eval_at(arr: np.ndarray) -> float:
        out = f(Tensor(arr))
        val = float(out.data.reshape(()))
        if not np.isfinite(val):
            raise NumericError("f(x) is not finite at a perturbed point")
        return val

    flat = base.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] = flat[i] + eps
        hi = eval_at(shifted.reshape(base.shape))
        shifted[i] = flat[i] - eps
        lo = eval_at(shifted.reshape(base.shape))
        numeric = (hi - lo) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, err)
    return worst

"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError, EvaluationError
from .autodiff import Tape, Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def __float__(self):
        return self.max_rel_error


def _evaluate(f, x):
    with no_grad():
        value = f(Tensor(x))
    value = float(np.asarray(value.data if isinstance(value, Tensor) else value).reshape(-1)[0])
    if not np.isfinite(value):
        raise EvaluationError(f"function is not finite at a perturbed point ({value})")
    return value


def grad_check(f, point, eps=1e-6, coords=None):
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` maps a :class:`Tensor` to a scalar tensor. ``coords`` optionally
    restricts the comparison to a subset of flat indices. The error at each
    checked coordinate is ``|analytic - numeric|`` scaled by the larger of
    the two gradients' max-norms, so near-zero components do not blow up
    the ratio.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
    analytic = np.asarray(backward(tape, out)[leaf]).reshape(-1)

    flat = x0.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords, dtype=int)
    numeric = np.zeros(idx.size)
    for n, i in enumerate(idx):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        numeric[n] = (_evaluate(f, xp.reshape(x0.shape)) - _evaluate(f, xm.reshape(x0.shape))) / (2 * eps)

    picked = analytic[idx]
    scale = max(np.max(np.abs(picked), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    errors = np.abs(picked - numeric) / scale
    worst = int(np.argmax(errors)) if errors.size else 0
    worst_index = np.unravel_index(int(idx[worst]), x0.shape) if errors.size else ()
    return GradCheckResult(float(errors.max(initial=0.0)), tuple(int(i) for i in worst_index),
                           picked, numeric)

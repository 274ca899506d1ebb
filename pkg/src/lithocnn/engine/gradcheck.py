"""Central finite-difference harness for validating analytic gradients.

``check_gradients`` rebuilds the graph under test in float64, runs the tape
backward, then perturbs every input element by ±h and compares. The numeric
side never touches the analytic code path.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
# Relative error floor: below this gradient magnitude the comparison is
# effectively absolute, keeping h^2 finite-difference noise out of the ratio.
REL_FLOOR = 1e-3


def numerical_gradients(f: Callable[[Sequence[np.ndarray]], float], arrays: Sequence[np.ndarray], h: float = DEFAULT_H):
    """Central differences of a scalar function w.r.t. each input array."""
    grads = []
    work = [a.astype(np.float64).copy() for a in arrays]
    for a in work:
        g = np.zeros_like(a)
        flat, gflat = a.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(work)
            flat[i] = orig - h
            down = f(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(
    build: Callable[[Sequence[Tensor]], Tensor],
    arrays: Sequence[np.ndarray],
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
) -> float:
    """Compare tape gradients of ``build(tensors) -> scalar`` against central differences.

    Returns the worst relative error over all inputs; raises AssertionError
    above ``tol``.
    """
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    loss = build(tensors)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def eval_scalar(work):
        return float(build([Tensor(a) for a in work]).data)

    numeric = numerical_gradients(eval_scalar, arrays, h=h)
    worst = max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
    if worst > tol:
        raise AssertionError(f"gradient mismatch: max relative error {worst:.3e} > {tol:.1e}")
    return worst

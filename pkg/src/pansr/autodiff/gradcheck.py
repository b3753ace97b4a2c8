"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float = 1e-6) -> np.ndarray:
    """d fn(*inputs) / d inputs[index] by central differences (fn returns a scalar).

    Runs with the tape enabled so ``fn`` may itself take gradients.
    """
    x = inputs[index]
    out = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(*inputs).data)
        flat[i] = orig - eps
        fm = float(fn(*inputs).data)
        flat[i] = orig
        out.reshape(-1)[i] = (fp - fm) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6, tol: float = 1e-6) -> float:
    """Compare analytic and numerical gradients for every input requiring grad.

    Returns the worst relative error (max-abs difference over max-abs
    magnitude) and raises AssertionError when it exceeds ``tol``.
    """
    targets = [t for t in inputs if t.requires_grad]
    analytic = grad(fn(*inputs), targets)
    worst = 0.0
    for t, g in zip(targets, analytic):
        num = numerical_grad(fn, inputs, list(inputs).index(t), eps)
        worst = max(worst, relative_error(g.data, num))
    if worst > tol:
        raise AssertionError(f"gradient check failed: relative error {worst:.3e} > {tol:.1e}")
    return worst

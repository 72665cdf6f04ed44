"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``param.data``."""
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f().data)
        flat[i] = orig - step
        down = float(f().data)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), zero when both vanish."""
    num = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if den < 1e-300:
        return 0.0
    return num / den


def check_gradients(
    f: Callable[[], Tensor], params: Mapping[str, Tensor], step: float = 1e-5
) -> dict[str, float]:
    """Relative error of the analytic gradient for each named parameter."""
    for p in params.values():
        p.grad = None
    f().backward()
    report = {}
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        report[name] = relative_error(analytic, numerical_grad(f, p, step))
    return report

"""
Central finite differences used as a derivative fallback and as a checking oracle.
"""

from typing import Callable, Optional

import numpy as np
import numpy.typing as npt

from potgame.config import settings

DoubleMatrix = npt.NDArray[np.float64]


def _steps(x: DoubleMatrix, step: Optional[float]) -> DoubleMatrix:
    base = settings.FD_STEP if step is None else step
    return base * (1.0 + np.abs(x))


def central_jacobian(
    fun: Callable[[DoubleMatrix], DoubleMatrix],
    x: DoubleMatrix,
    step: Optional[float] = None,
) -> DoubleMatrix:
    """Jacobian of a vector function, one column per coordinate of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    h = _steps(x, step)
    columns = []
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = h[i]
        forward = np.atleast_1d(np.asarray(fun(x + dx), dtype=np.float64))
        backward = np.atleast_1d(np.asarray(fun(x - dx), dtype=np.float64))
        columns.append((forward - backward) / (2.0 * h[i]))
    if not columns:
        out_dim = np.atleast_1d(np.asarray(fun(x), dtype=np.float64)).size
        return np.zeros((out_dim, 0))
    return np.stack(columns, axis=1)


def central_gradient(
    fun: Callable[[DoubleMatrix], float],
    x: DoubleMatrix,
    step: Optional[float] = None,
) -> DoubleMatrix:
    """Gradient of a scalar function."""
    return central_jacobian(lambda z: np.array([fun(z)]), x, step)[0]


def central_hessian(
    gradient: Callable[[DoubleMatrix], DoubleMatrix],
    x: DoubleMatrix,
    step: Optional[float] = None,
) -> DoubleMatrix:
    """Symmetrized Jacobian of a gradient map."""
    hess = central_jacobian(gradient, x, step)
    return 0.5 * (hess + hess.T)

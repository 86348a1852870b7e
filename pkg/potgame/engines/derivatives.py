"""
Derivative Checks - analytic derivatives against central finite differences.

Errors are relative: ||analytic - numeric||_inf / max(1, ||numeric||_inf),
maximized over random sample points. Only first derivatives are compared;
the Hessians handed to the solver are Gauss-Newton approximations.
"""

from typing import Any, Optional, Union

import numpy as np

from potgame.config import settings
from potgame.engines.game import (
    AgentDynamics,
    Constraint,
    ConstraintSet,
    DoubleMatrix,
    DynamicsModel,
    TrajectoryObjective,
)
from potgame.utils.finite_diff import central_gradient, central_jacobian
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


def relative_error(analytic: DoubleMatrix, numeric: DoubleMatrix) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if numeric.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def _step(step: Optional[float]) -> float:
    return settings.DERIVATIVE_CHECK_STEP if step is None else step


def check_objective_derivatives(
    objective: TrajectoryObjective,
    n: int,
    m: int,
    horizon: int,
    samples: int = 10,
    seed: int = 0,
    step: Optional[float] = None,
    scale: float = 1.0,
) -> float:
    """Stage gradients (l_x, l_u) at random (k, x, u) and the terminal gradient at T."""
    h = _step(step)
    worst = 0.0
    for s in range(samples):
        rng = np.random.default_rng([seed, s])
        k = int(rng.integers(horizon))
        x = rng.normal(scale=scale, size=n)
        u = rng.normal(scale=scale, size=m)
        d = objective.stage_derivatives(k, x, u)
        numeric = central_gradient(lambda z: objective.stage(k, z[:n], z[n:]), np.r_[x, u], h)
        worst = max(worst, relative_error(np.r_[d.lx, d.lu], numeric))
        dt = objective.terminal_derivatives(horizon, x)
        numeric_t = central_gradient(lambda z: objective.terminal(horizon, z), x, h)
        worst = max(worst, relative_error(dt.lx, numeric_t))
    return worst


def check_dynamics_derivatives(
    dynamics: Union[DynamicsModel, AgentDynamics],
    samples: int = 10,
    seed: int = 0,
    step: Optional[float] = None,
    scale: float = 1.0,
) -> float:
    """Step-map Jacobians (f_x, f_u) at random points."""
    h = _step(step)
    if isinstance(dynamics, DynamicsModel):
        n, m = dynamics.layout.n, dynamics.layout.m
    else:
        n, m = dynamics.state_dim, dynamics.control_dim
    worst = 0.0
    for s in range(samples):
        rng = np.random.default_rng([seed, s])
        x = rng.normal(scale=scale, size=n)
        u = rng.normal(scale=scale, size=m)
        fx, fu = dynamics.jacobians(x, u, 0)
        worst = max(
            worst,
            relative_error(fx, central_jacobian(lambda z: dynamics.step(z, u, 0), x, h)),
            relative_error(fu, central_jacobian(lambda v: dynamics.step(x, v, 0), u, h)),
        )
    return worst


def check_constraint_derivatives(
    constraints: Union[ConstraintSet, Constraint],
    n: int,
    m: int,
    samples: int = 10,
    seed: int = 0,
    step: Optional[float] = None,
    scale: float = 1.0,
) -> float:
    """Stage constraint Jacobians at random points, terminal Jacobians at the same states."""
    h = _step(step)
    if isinstance(constraints, Constraint):
        constraints = ConstraintSet(
            [constraints], [constraints] if constraints.state_only else []
        )
    worst = 0.0
    for s in range(samples):
        rng = np.random.default_rng([seed, s])
        x = rng.normal(scale=scale, size=n)
        u = rng.normal(scale=scale, size=m)
        if constraints.stage_dim:
            gx, gu = constraints.stage_jacobian(0, x, u)
            worst = max(
                worst,
                relative_error(
                    gx, central_jacobian(lambda z: constraints.stage_values(0, z, u), x, h)
                ),
                relative_error(
                    gu, central_jacobian(lambda v: constraints.stage_values(0, x, v), u, h)
                ),
            )
        if constraints.terminal_dim:
            gt = constraints.terminal_jacobian(0, x)
            numeric = central_jacobian(lambda z: constraints.terminal_values(0, z), x, h)
            worst = max(worst, relative_error(gt, numeric))
    return worst


def derivative_check(
    target: Any,
    samples: int = 10,
    seed: int = 0,
    *,
    n: Optional[int] = None,
    m: Optional[int] = None,
    horizon: Optional[int] = None,
    step: Optional[float] = None,
    scale: float = 1.0,
) -> float:
    """
    Max relative derivative error of an objective, dynamics model or constraint set.

    Objectives need ``n``, ``m`` and ``horizon``; constraints need ``n`` and ``m``.
    """
    if isinstance(target, (DynamicsModel, AgentDynamics)):
        error = check_dynamics_derivatives(target, samples, seed, step, scale)
        kind = "dynamics"
    elif isinstance(target, (ConstraintSet, Constraint)):
        if n is None or m is None:
            raise ValueError("Constraint checks need the joint dimensions n and m")
        error = check_constraint_derivatives(target, n, m, samples, seed, step, scale)
        kind = "constraints"
    else:
        if n is None or m is None or horizon is None:
            raise ValueError("Objective checks need n, m and horizon")
        error = check_objective_derivatives(target, n, m, horizon, samples, seed, step, scale)
        kind = "objective"
    logger.debug("derivative_checked", target=kind, samples=samples, max_error=error)
    return error

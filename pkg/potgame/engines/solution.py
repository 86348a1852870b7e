"""
Solver Types - options, status and solution records shared by the OCP solvers.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from potgame.config import settings
from potgame.engines.game import DoubleMatrix, Trajectory


class SolverOptions(BaseModel):
    """Iteration caps, tolerances and the penalty / regularization / line-search schedules."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_outer: int = Field(default_factory=lambda: settings.SOLVER_MAX_OUTER, ge=1)
    max_inner: int = Field(default_factory=lambda: settings.SOLVER_MAX_INNER, ge=1)
    cost_tol: float = Field(default_factory=lambda: settings.SOLVER_COST_TOL, gt=0)
    gradient_tol: float = Field(default_factory=lambda: settings.SOLVER_GRADIENT_TOL, gt=0)
    constraint_tol: float = Field(default_factory=lambda: settings.SOLVER_CONSTRAINT_TOL, gt=0)
    penalty_init: float = Field(default_factory=lambda: settings.PENALTY_INIT, gt=0)
    penalty_growth: float = Field(default_factory=lambda: settings.PENALTY_GROWTH, gt=1)
    penalty_max: float = Field(default_factory=lambda: settings.PENALTY_MAX, gt=0)
    regularization_init: float = Field(
        default_factory=lambda: settings.REGULARIZATION_INIT, ge=0
    )
    regularization_min: float = Field(default_factory=lambda: settings.REGULARIZATION_MIN, gt=0)
    regularization_growth: float = Field(
        default_factory=lambda: settings.REGULARIZATION_GROWTH, gt=1
    )
    regularization_decay: float = Field(
        default_factory=lambda: settings.REGULARIZATION_DECAY, gt=0, lt=1
    )
    regularization_max: float = Field(default_factory=lambda: settings.REGULARIZATION_MAX, gt=0)
    line_search_factor: float = Field(
        default_factory=lambda: settings.LINE_SEARCH_FACTOR, gt=0, lt=1
    )
    line_search_min_step: float = Field(
        default_factory=lambda: settings.LINE_SEARCH_MIN_STEP, gt=0, le=1
    )
    line_search_accept_ratio: float = Field(
        default_factory=lambda: settings.LINE_SEARCH_ACCEPT_RATIO, gt=0, lt=1
    )

    def with_overrides(self, **overrides: Any) -> "SolverOptions":
        """Validated copy with some fields replaced; None values are ignored."""
        values = self.model_dump()
        values.update({key: value for key, value in overrides.items() if value is not None})
        return SolverOptions.model_validate(values)


class SolverStatus(str, Enum):
    """Termination status of a solve."""

    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    STALLED = "stalled"
    INFEASIBLE = "infeasible"


class IterationRecord(BaseModel):
    """One accepted (or final) iterate, as written to the iteration trace."""

    outer: int
    iteration: int
    cost: float
    violation: float = 0.0
    regularization: float
    step: float
    gradient_norm: float
    penalty: float = 0.0


TraceSink = Callable[[IterationRecord], None]


@dataclass(frozen=True, eq=False)
class OcpSolution:
    """
    Solution of the potential optimal control problem.

    ``xi`` holds the dynamics multipliers xi_0..xi_{T-1} (xi_k pairs with the
    constraint x_{k+1} = f(x_k, u_k)). ``delta`` / ``delta_terminal`` hold the
    constraint multipliers in the non-positive sign convention; they are empty
    for unconstrained problems.
    """

    trajectory: Trajectory
    xi: DoubleMatrix
    delta: DoubleMatrix
    delta_terminal: DoubleMatrix
    iterations: int
    outer_iterations: int
    cost: float
    max_violation: float
    complementarity: float
    gradient_norm: float
    penalty: float
    status: SolverStatus

    @property
    def converged(self) -> bool:
        return self.status is SolverStatus.CONVERGED

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "cost": self.cost,
            "max_violation": self.max_violation,
            "complementarity": self.complementarity,
            "gradient_norm": self.gradient_norm,
            "penalty": self.penalty,
        }


def empty_multipliers(horizon: int, stage_dim: int, terminal_dim: int) -> tuple[Any, Any]:
    return np.zeros((horizon, stage_dim)), np.zeros(terminal_dim)


def best_of(current: Optional[OcpSolution], candidate: OcpSolution) -> OcpSolution:
    """Lower violation wins; ties go to the lower cost."""
    if current is None:
        return candidate
    key_current = (current.max_violation, current.cost)
    key_candidate = (candidate.max_violation, candidate.cost)
    return candidate if key_candidate < key_current else current

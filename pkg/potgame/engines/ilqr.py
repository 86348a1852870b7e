"""
iLQR - Gauss-Newton iterative LQR for stage-additive objectives.

Each iteration linearizes the joint dynamics and takes a second-order model of
the objective along the current trajectory, runs an LQR backward pass with
Levenberg regularization on the control Hessian, and applies the resulting
policy with a backtracking line search on the feedforward term.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from potgame.engines.game import (
    DoubleMatrix,
    DynamicsModel,
    StageDerivatives,
    TerminalDerivatives,
    Trajectory,
    TrajectoryObjective,
    objective_value,
    rollout,
    stage_derivatives_batch,
)
from potgame.engines.solution import (
    IterationRecord,
    OcpSolution,
    SolverOptions,
    SolverStatus,
    TraceSink,
    empty_multipliers,
)
from potgame.errors import DivergenceError, SolverFailure
from potgame.utils.logger import get_logger

logger = get_logger(__name__)

# Relative cost changes below this are floating-point noise
ROUNDOFF_TOL = 100 * float(np.finfo(np.float64).eps)


@dataclass(frozen=True, eq=False)
class LocalModel:
    """Dynamics Jacobians (T, n, n), (T, n, m) and stacked objective derivatives."""

    A: DoubleMatrix
    B: DoubleMatrix
    stage: StageDerivatives
    terminal: TerminalDerivatives

    @property
    def horizon(self) -> int:
        return int(self.A.shape[0])


@dataclass(frozen=True, eq=False)
class Policy:
    """Feedforward k_k and feedback K_k with the expected-decrease terms."""

    feedforward: DoubleMatrix
    feedback: DoubleMatrix
    dV1: float
    dV2: float


def linearize(
    objective: TrajectoryObjective, dynamics: DynamicsModel, traj: Trajectory
) -> LocalModel:
    states = traj.states[:-1]
    A, B = dynamics.jacobians_batch(states, traj.controls)
    stage = stage_derivatives_batch(objective, states, traj.controls)
    terminal = objective.terminal_derivatives(traj.horizon, traj.states[-1])
    return LocalModel(A, B, stage, terminal)


def costates(model: LocalModel) -> tuple[DoubleMatrix, DoubleMatrix]:
    """
    Adjoint recursion along a trajectory.

    Returns (xi, grad_u) where xi_k = p_{k+1} multiplies the dynamics row
    x_{k+1} = f(x_k, u_k) and grad_u_k = l_u + B_k' p_{k+1} is the exact
    gradient of the objective w.r.t. u_k under the dynamics.
    """
    T = model.horizon
    n = model.terminal.lx.size
    xi = np.zeros((T, n))
    p = model.terminal.lx.copy()
    for k in range(T - 1, -1, -1):
        xi[k] = p
        p = model.stage.lx[k] + model.A[k].T @ p
    grad_u = model.stage.lu + np.einsum("tnm,tn->tm", model.B, xi)
    return xi, grad_u


def backward_pass(model: LocalModel, regularization: float) -> Optional[Policy]:
    """LQR backward recursion; None when a regularized Quu is not positive definite."""
    T = model.horizon
    m = model.B.shape[2]
    n = model.terminal.lx.size
    k_ff = np.zeros((T, m))
    K_fb = np.zeros((T, m, n))
    Vx = model.terminal.lx.copy()
    Vxx = model.terminal.lxx.copy()
    dV1 = 0.0
    dV2 = 0.0
    eye = np.eye(m)
    d = model.stage
    for k in range(T - 1, -1, -1):
        A, B = model.A[k], model.B[k]
        Qx = d.lx[k] + A.T @ Vx
        Qu = d.lu[k] + B.T @ Vx
        VxxA = Vxx @ A
        Qxx = d.lxx[k] + A.T @ VxxA
        Quu = d.luu[k] + B.T @ Vxx @ B
        Qux = d.lux[k] + B.T @ VxxA
        try:
            factor = linalg.cho_factor(
                0.5 * (Quu + Quu.T) + regularization * eye, check_finite=False
            )
        except linalg.LinAlgError:
            return None
        kk = -linalg.cho_solve(factor, Qu, check_finite=False)
        KK = -linalg.cho_solve(factor, Qux, check_finite=False)
        Vx = Qx + KK.T @ Quu @ kk + KK.T @ Qu + Qux.T @ kk
        Vxx = Qxx + KK.T @ Quu @ KK + KK.T @ Qux + Qux.T @ KK
        Vxx = 0.5 * (Vxx + Vxx.T)
        dV1 += float(kk @ Qu)
        dV2 += float(0.5 * kk @ Quu @ kk)
        k_ff[k] = kk
        K_fb[k] = KK
    return Policy(k_ff, K_fb, dV1, dV2)


def apply_policy(
    dynamics: DynamicsModel, traj: Trajectory, policy: Policy, alpha: float
) -> Trajectory:
    T = traj.horizon
    states = np.empty_like(traj.states)
    controls = np.empty_like(traj.controls)
    states[0] = traj.states[0]
    for k in range(T):
        controls[k] = (
            traj.controls[k]
            + alpha * policy.feedforward[k]
            + policy.feedback[k] @ (states[k] - traj.states[k])
        )
        states[k + 1] = dynamics.step(states[k], controls[k], k)
        if not np.all(np.isfinite(states[k + 1])):
            raise DivergenceError("Forward pass produced a non-finite state", step=k + 1)
    return Trajectory(states, controls, traj.dt)


def _solution(
    objective: TrajectoryObjective,
    dynamics: DynamicsModel,
    traj: Trajectory,
    iterations: int,
    status: SolverStatus,
    penalty: float,
) -> OcpSolution:
    model = linearize(objective, dynamics, traj)
    xi, grad_u = costates(model)
    delta, delta_terminal = empty_multipliers(traj.horizon, 0, 0)
    return OcpSolution(
        trajectory=traj,
        xi=xi,
        delta=delta,
        delta_terminal=delta_terminal,
        iterations=iterations,
        outer_iterations=0,
        cost=objective_value(objective, traj),
        max_violation=0.0,
        complementarity=0.0,
        gradient_norm=float(np.max(np.abs(grad_u), initial=0.0)),
        penalty=penalty,
        status=status,
    )


def ilqr_solve(
    objective: TrajectoryObjective,
    dynamics: DynamicsModel,
    x0: DoubleMatrix,
    u_init: Optional[DoubleMatrix] = None,
    opts: Optional[SolverOptions] = None,
    trace: Optional[TraceSink] = None,
    *,
    horizon: Optional[int] = None,
    outer: int = 0,
    penalty: float = 0.0,
) -> OcpSolution:
    """
    Minimize ``objective`` over control sequences from ``x0``.

    Converged when the control gradient drops below ``gradient_tol`` or an
    accepted step decreases the cost by less than ``cost_tol`` relative. A
    full step whose predicted decrease is below ``ROUNDOFF_TOL`` relative is
    taken as stationary rather than failing the line search. Returns STALLED
    when the line search exhausts; raises ``SolverFailure`` when the
    regularization exceeds its cap.
    """
    opts = opts or SolverOptions()
    if u_init is None:
        if horizon is None:
            raise ValueError("Either u_init or horizon is required")
        u_init = np.zeros((horizon, dynamics.layout.m))
    traj = rollout(dynamics, x0, u_init)
    cost = objective_value(objective, traj)
    reg = opts.regularization_init
    status = SolverStatus.MAX_ITERATIONS
    iterations = 0

    for iteration in range(1, opts.max_inner + 1):
        model = linearize(objective, dynamics, traj)
        _, grad_u = costates(model)
        grad_norm = float(np.max(np.abs(grad_u), initial=0.0))
        if grad_norm <= opts.gradient_tol:
            status = SolverStatus.CONVERGED
            break

        policy = backward_pass(model, reg)
        while policy is None:
            reg = max(reg * opts.regularization_growth, opts.regularization_min)
            if reg > opts.regularization_max:
                logger.warning("ilqr_regularization_cap", iteration=iteration, regularization=reg)
                raise SolverFailure(
                    "Backward-pass regularization exceeded its cap",
                    best=_solution(
                        objective, dynamics, traj, iterations, SolverStatus.STALLED, penalty
                    ),
                    iteration=iteration,
                    regularization=reg,
                )
            logger.debug("ilqr_regularization_increased", iteration=iteration, regularization=reg)
            policy = backward_pass(model, reg)

        noise = ROUNDOFF_TOL * max(abs(cost), 1.0)
        alpha = 1.0
        accepted: Optional[Trajectory] = None
        new_cost = cost
        at_noise_floor = False
        while alpha >= opts.line_search_min_step:
            expected = -(alpha * policy.dV1 + alpha**2 * policy.dV2)
            try:
                candidate = apply_policy(dynamics, traj, policy, alpha)
            except DivergenceError:
                alpha *= opts.line_search_factor
                continue
            candidate_cost = objective_value(objective, candidate)
            if alpha == 1.0 and expected <= noise and candidate_cost <= cost + noise:
                # predicted decrease is below what the cost can resolve
                accepted, new_cost = candidate, candidate_cost
                at_noise_floor = True
                break
            if expected > 0 and (cost - candidate_cost) / expected > opts.line_search_accept_ratio:
                accepted, new_cost = candidate, candidate_cost
                break
            alpha *= opts.line_search_factor

        if accepted is None:
            status = SolverStatus.STALLED
            logger.warning(
                "ilqr_line_search_exhausted", iteration=iteration, cost=cost, gradient=grad_norm
            )
            break

        decrease = (cost - new_cost) / max(abs(cost), 1e-12)
        traj, cost = accepted, new_cost
        iterations = iteration
        reg *= opts.regularization_decay
        if reg < opts.regularization_min:
            reg = 0.0
        if trace is not None:
            trace(
                IterationRecord(
                    outer=outer,
                    iteration=iteration,
                    cost=cost,
                    regularization=reg,
                    step=alpha,
                    gradient_norm=grad_norm,
                    penalty=penalty,
                )
            )
        logger.debug(
            "ilqr_iteration", iteration=iteration, cost=cost, step=alpha, gradient=grad_norm
        )
        if at_noise_floor or decrease < opts.cost_tol:
            status = SolverStatus.CONVERGED
            break

    solution = _solution(objective, dynamics, traj, iterations, status, penalty)
    logger.debug(
        "ilqr_finished",
        status=solution.status.value,
        iterations=iterations,
        cost=solution.cost,
        gradient=solution.gradient_norm,
    )
    return solution

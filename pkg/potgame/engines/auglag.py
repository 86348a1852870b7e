"""
Augmented Lagrangian - constrained potential minimization on top of iLQR.

Inequality rows g <= 0 use the Powell-Hestenes-Rockafellar penalty

    (1 / 2mu) (max(0, lam + mu g)^2 - lam^2),       lam <- max(0, lam + mu g)

and equality rows h = 0 use lam h + mu/2 h^2 with the unclamped update
lam <- lam + mu h. Multipliers are kept non-negative internally and reported
as delta = -lam (non-positive on inequality rows).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from potgame.engines.game import (
    AgentId,
    AgentLayout,
    Constraint,
    ConstraintSet,
    DoubleMatrix,
    DynamicsModel,
    Game,
    StageDerivatives,
    StepArray,
    TerminalDerivatives,
    Trajectory,
    TrajectoryObjective,
    agent_cost,
    constraint_violation,
    objective_value,
    rollout,
    stage_cost_batch,
    stage_derivatives_batch,
)
from potgame.engines.ilqr import ilqr_solve
from potgame.engines.potential import PotentialCertificate, PotentialObjective
from potgame.engines.solution import (
    OcpSolution,
    SolverOptions,
    SolverStatus,
    TraceSink,
    best_of,
)
from potgame.errors import SolverFailure
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


def _penalty_terms(g: DoubleMatrix, lam: DoubleMatrix, mu: float, eq: DoubleMatrix) -> DoubleMatrix:
    shifted = np.maximum(0.0, lam + mu * g)
    inequality = (shifted**2 - lam**2) / (2.0 * mu)
    equality = lam * g + 0.5 * mu * g**2
    return np.where(eq, equality, inequality)


def _penalty_value(g: DoubleMatrix, lam: DoubleMatrix, mu: float, eq: DoubleMatrix) -> float:
    return float(np.sum(_penalty_terms(g, lam, mu, eq)))


def _penalty_weights(
    g: DoubleMatrix, lam: DoubleMatrix, mu: float, eq: DoubleMatrix
) -> tuple[DoubleMatrix, DoubleMatrix]:
    """First-order multiplier estimate and the Gauss-Newton curvature mask."""
    estimate = lam + mu * g
    active = eq | (estimate > 0.0)
    nu = np.where(eq, estimate, np.maximum(0.0, estimate))
    return nu, active.astype(np.float64)


def update_multipliers(
    g: DoubleMatrix, lam: DoubleMatrix, mu: float, eq: DoubleMatrix
) -> DoubleMatrix:
    estimate = lam + mu * g
    return np.where(eq, estimate, np.maximum(0.0, estimate))


def complementarity(g: DoubleMatrix, lam: DoubleMatrix, eq: DoubleMatrix) -> float:
    """max |lam g| over inequality rows."""
    products = np.where(eq, 0.0, np.abs(lam * g))
    return float(np.max(products, initial=0.0))


class AugmentedLagrangianObjective:
    """Base objective plus the augmented Lagrangian penalty of a constraint set."""

    def __init__(
        self,
        base: TrajectoryObjective,
        constraints: ConstraintSet,
        lam: DoubleMatrix,
        lam_terminal: DoubleMatrix,
        penalty: float,
    ) -> None:
        self.base = base
        self.constraints = constraints
        self.lam = lam
        self.lam_terminal = lam_terminal
        self.penalty = penalty

    def _stage_lam(self, k: int) -> DoubleMatrix:
        return self.lam[min(k, self.lam.shape[0] - 1)]

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        value = self.base.stage(k, x, u)
        if self.constraints.stage_dim:
            g = self.constraints.stage_values(k, x, u)
            value += _penalty_value(
                g, self._stage_lam(k), self.penalty, self.constraints.stage_equality
            )
        return float(value)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        value = self.base.terminal(k, x)
        if self.constraints.terminal_dim:
            g = self.constraints.terminal_values(k, x)
            value += _penalty_value(
                g, self.lam_terminal, self.penalty, self.constraints.terminal_equality
            )
        return float(value)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        d = self.base.stage_derivatives(k, x, u)
        cons = self.constraints
        if not cons.stage_dim:
            return d
        g = cons.stage_values(k, x, u)
        Gx, Gu = cons.stage_jacobian(k, x, u)
        nu, active = _penalty_weights(g, self._stage_lam(k), self.penalty, cons.stage_equality)
        D = self.penalty * active
        return StageDerivatives(
            lx=d.lx + Gx.T @ nu,
            lu=d.lu + Gu.T @ nu,
            lxx=d.lxx + Gx.T @ (D[:, np.newaxis] * Gx),
            luu=d.luu + Gu.T @ (D[:, np.newaxis] * Gu),
            lux=d.lux + Gu.T @ (D[:, np.newaxis] * Gx),
        )

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        d = self.base.terminal_derivatives(k, x)
        cons = self.constraints
        if not cons.terminal_dim:
            return d
        g = cons.terminal_values(k, x)
        Gx = cons.terminal_jacobian(k, x)
        nu, active = _penalty_weights(
            g, self.lam_terminal, self.penalty, cons.terminal_equality
        )
        D = self.penalty * active
        return TerminalDerivatives(d.lx + Gx.T @ nu, d.lxx + Gx.T @ (D[:, np.newaxis] * Gx))

    def _stage_lams(self, T: int) -> DoubleMatrix:
        return self.lam[np.minimum(np.arange(T), self.lam.shape[0] - 1)]

    def stage_batch(self, states: DoubleMatrix, controls: DoubleMatrix) -> DoubleMatrix:
        values = stage_cost_batch(self.base, states, controls)
        cons = self.constraints
        if not cons.stage_dim:
            return values
        g = cons.stage_values_batch(states, controls)
        lam = self._stage_lams(len(controls))
        terms = _penalty_terms(g, lam, self.penalty, cons.stage_equality)
        return values + np.sum(terms, axis=1)

    def stage_derivatives_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> StageDerivatives:
        d = stage_derivatives_batch(self.base, states, controls)
        cons = self.constraints
        if not cons.stage_dim:
            return d
        g = cons.stage_values_batch(states, controls)
        Gx, Gu = cons.stage_jacobian_batch(states, controls)
        lam = self._stage_lams(len(controls))
        nu, active = _penalty_weights(g, lam, self.penalty, cons.stage_equality)
        GxT, GuT = Gx.transpose(0, 2, 1), Gu.transpose(0, 2, 1)
        DGx = (self.penalty * active)[:, :, np.newaxis] * Gx
        DGu = (self.penalty * active)[:, :, np.newaxis] * Gu
        return StageDerivatives(
            lx=d.lx + np.einsum("tcn,tc->tn", Gx, nu),
            lu=d.lu + np.einsum("tcm,tc->tm", Gu, nu),
            lxx=d.lxx + GxT @ DGx,
            luu=d.luu + GuT @ DGu,
            lux=d.lux + GuT @ DGx,
        )


def constraint_values(
    constraints: ConstraintSet, traj: Trajectory
) -> tuple[DoubleMatrix, DoubleMatrix]:
    """Stage values (T, c) and terminal values (c_T,) along a trajectory."""
    stage = constraints.stage_values_batch(traj.states[:-1], traj.controls)
    terminal = constraints.terminal_values(traj.horizon, traj.states[-1])
    return stage, terminal


def max_violation(constraints: ConstraintSet, g: DoubleMatrix, g_terminal: DoubleMatrix) -> float:
    stage = constraint_violation(g, constraints.stage_equality)
    terminal = constraint_violation(g_terminal, constraints.terminal_equality)
    return max(float(np.max(stage, initial=0.0)), float(np.max(terminal, initial=0.0)))


def solve_constrained(
    objective: TrajectoryObjective,
    dynamics: DynamicsModel,
    constraints: ConstraintSet,
    x0: DoubleMatrix,
    u_init: DoubleMatrix,
    opts: Optional[SolverOptions] = None,
    trace: Optional[TraceSink] = None,
) -> OcpSolution:
    """
    Augmented Lagrangian outer loop.

    Converged when the inner solve converged and both the violation and the
    complementarity residual are within tolerance. The penalty grows only while the
    iterate is infeasible; reaching the penalty cap while still infeasible
    raises ``SolverFailure`` carrying the best iterate.
    """
    opts = opts or SolverOptions()
    u = np.asarray(u_init, dtype=np.float64)
    if constraints.is_empty:
        return ilqr_solve(objective, dynamics, x0, u, opts, trace)

    T = u.shape[0]
    lam = np.zeros((T, constraints.stage_dim))
    lam_terminal = np.zeros(constraints.terminal_dim)
    mu = opts.penalty_init
    best: Optional[OcpSolution] = None
    total_inner = 0

    for outer in range(1, opts.max_outer + 1):
        augmented = AugmentedLagrangianObjective(objective, constraints, lam, lam_terminal, mu)
        inner = ilqr_solve(augmented, dynamics, x0, u, opts, trace, outer=outer, penalty=mu)
        total_inner += inner.iterations
        traj = inner.trajectory
        g, g_terminal = constraint_values(constraints, traj)
        violation = max_violation(constraints, g, g_terminal)

        lam = update_multipliers(g, lam, mu, constraints.stage_equality)
        lam_terminal = update_multipliers(
            g_terminal, lam_terminal, mu, constraints.terminal_equality
        )
        comp = max(
            complementarity(g, lam, constraints.stage_equality),
            complementarity(g_terminal, lam_terminal, constraints.terminal_equality),
        )
        converged = (
            violation <= opts.constraint_tol
            and inner.converged
            and comp <= opts.constraint_tol
        )
        candidate = OcpSolution(
            trajectory=traj,
            xi=inner.xi,
            delta=-lam,
            delta_terminal=-lam_terminal,
            iterations=total_inner,
            outer_iterations=outer,
            cost=objective_value(objective, traj),
            max_violation=violation,
            complementarity=comp,
            gradient_norm=inner.gradient_norm,
            penalty=mu,
            status=SolverStatus.CONVERGED if converged else SolverStatus.MAX_ITERATIONS,
        )
        best = best_of(best, candidate)
        logger.debug(
            "al_outer_iteration",
            outer=outer,
            violation=violation,
            complementarity=comp,
            gradient=inner.gradient_norm,
            penalty=mu,
            inner_status=inner.status.value,
        )
        if converged:
            return candidate

        u = np.array(traj.controls)
        if violation > opts.constraint_tol:
            if mu >= opts.penalty_max:
                logger.warning("al_penalty_cap_reached", violation=violation, penalty=mu)
                raise SolverFailure(
                    "Penalty reached its cap without a feasible iterate",
                    best=best,
                    violation=violation,
                    penalty=mu,
                )
            mu = min(mu * opts.penalty_growth, opts.penalty_max)

    assert best is not None
    logger.warning("al_outer_limit_reached", outer=opts.max_outer, violation=best.max_violation)
    return best


def al_solve(
    game: Game,
    cert: PotentialCertificate,
    u_init: Optional[DoubleMatrix] = None,
    opts: Optional[SolverOptions] = None,
    trace: Optional[TraceSink] = None,
) -> OcpSolution:
    """Minimize the certified potential of ``game`` subject to its constraints."""
    cert.check_game(game)
    u0 = game.zero_controls() if u_init is None else np.asarray(u_init, dtype=np.float64)
    logger.info(
        "al_solve_started",
        agents=game.num_agents,
        horizon=game.horizon,
        structure=cert.structure.value,
        constraints=game.constraints.stage_dim,
    )
    solution = solve_constrained(
        PotentialObjective(cert), game.dynamics, game.constraints, game.x0, u0, opts, trace
    )
    logger.info(
        "al_solve_finished",
        status=solution.status.value,
        iterations=solution.iterations,
        outer_iterations=solution.outer_iterations,
        cost=solution.cost,
        violation=solution.max_violation,
    )
    return solution


# ---------------------------------------------------------------------------
# Single-agent re-optimization with the other agents frozen
# ---------------------------------------------------------------------------


def _join(frozen: DoubleMatrix, sl: slice, k: int, ui: DoubleMatrix) -> DoubleMatrix:
    u = np.array(frozen[min(k, frozen.shape[0] - 1)])
    u[sl] = ui
    return u


def _join_rows(frozen: DoubleMatrix, sl: slice, controls: DoubleMatrix) -> DoubleMatrix:
    """``_join`` at k = 0..T-1 for the rows of ``controls``."""
    u = frozen[np.minimum(np.arange(len(controls)), frozen.shape[0] - 1)]
    u[:, sl] = controls
    return u


class FrozenAgentDynamics(DynamicsModel):
    """Joint dynamics driven by agent i's controls only; the others replay ``frozen``."""

    def __init__(self, base: DynamicsModel, agent: AgentId, frozen: DoubleMatrix) -> None:
        self.base = base
        self.agent = agent
        self.frozen = np.asarray(frozen, dtype=np.float64)
        self.slice = base.layout.control_slice(agent)
        self.agents = base.agents
        self.dt = base.dt
        self.layout = AgentLayout((base.layout.n,), (base.layout.control_dims[agent],))

    def step(self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0) -> DoubleMatrix:
        return self.base.step(x, _join(self.frozen, self.slice, k, u), k)

    def jacobians(
        self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        A, B = self.base.jacobians(x, _join(self.frozen, self.slice, k, u), k)
        return A, B[:, self.slice]

    def jacobians_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        A, B = self.base.jacobians_batch(states, _join_rows(self.frozen, self.slice, controls))
        return A, B[:, :, self.slice]


class FrozenAgentObjective:
    """Agent i's own cost J^i as a function of its controls, others frozen."""

    def __init__(self, game: Game, agent: AgentId, frozen: DoubleMatrix) -> None:
        self.costs = game.costs
        self.agent = agent
        self.frozen = np.asarray(frozen, dtype=np.float64)
        self.state_slice = game.layout.state_slice(agent)
        self.slice = game.layout.control_slice(agent)
        self.n = game.layout.n

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        return self.costs.agent_stage(self.agent, k, x, _join(self.frozen, self.slice, k, u))

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        return self.costs.agent_terminal(self.agent, k, x)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        full = _join(self.frozen, self.slice, k, u)
        gx, gu = self.costs.agent_stage_gradient(self.agent, k, x, full)
        block = self.costs.agent_block_derivatives(self.agent, k, x, full)
        si = self.state_slice
        lxx = np.zeros((self.n, self.n))
        lxx[si, si] = block.lxx
        lux = np.zeros((u.size, self.n))
        lux[:, si] = block.lux
        return StageDerivatives(gx, gu[self.slice], lxx, block.luu, lux)

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        gx = self.costs.agent_terminal_gradient(self.agent, k, x)
        block = self.costs.agent_block_terminal_derivatives(self.agent, k, x)
        lxx = np.zeros((self.n, self.n))
        lxx[self.state_slice, self.state_slice] = block.lxx
        return TerminalDerivatives(gx, lxx)


class FrozenAgentConstraint(Constraint):
    """A joint constraint seen as a function of (x, u^i) with the other controls frozen."""

    def __init__(self, base: Constraint, control: slice, frozen: DoubleMatrix) -> None:
        self.base = base
        self.slice = control
        self.frozen = frozen
        self.dim = base.dim
        self.equality = base.equality
        self.state_only = base.state_only
        self.agents = base.agents

    def value(self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]) -> DoubleMatrix:
        full = None if u is None else _join(self.frozen, self.slice, k, u)
        return self.base.value(k, x, full)

    def jacobian(
        self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        if u is None:
            return self.base.jacobian(k, x, None)
        gx, gu = self.base.jacobian(k, x, _join(self.frozen, self.slice, k, u))
        return gx, None if gu is None else np.atleast_2d(gu)[:, self.slice]

    def value_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        full = _join_rows(self.frozen, self.slice, controls)
        return self.base.value_batch(steps, states, full)

    def jacobian_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        full = _join_rows(self.frozen, self.slice, controls)
        gx, gu = self.base.jacobian_batch(steps, states, full)
        return gx, gu[:, :, self.slice]


@dataclass(frozen=True, eq=False)
class BestResponseReport:
    """Outcome of re-optimizing one agent against the others' frozen controls."""

    agent: AgentId
    original_cost: float
    best_cost: float
    relative_improvement: float
    feasible: bool
    trajectory: Trajectory
    status: SolverStatus


def agent_best_response(
    game: Game,
    sol: OcpSolution,
    i: AgentId,
    opts: Optional[SolverOptions] = None,
) -> BestResponseReport:
    """
    Re-solve agent i's constrained problem with every other agent frozen at ``sol``.

    The improvement is (J^i(sol) - J^i(response)) / max(|J^i(sol)|, 1); only
    the constraints that read agent i's blocks restrict the response.
    """
    game.layout.check_agent(i)
    opts = opts or SolverOptions()
    frozen = np.array(sol.trajectory.controls)
    sl = game.layout.control_slice(i)
    cons = game.constraints
    agent_constraints = ConstraintSet(
        [FrozenAgentConstraint(c, sl, frozen) for c in cons.stage if c.involves(i)],
        [FrozenAgentConstraint(c, sl, frozen) for c in cons.terminal if c.involves(i)],
    )
    try:
        response = solve_constrained(
            FrozenAgentObjective(game, i, frozen),
            FrozenAgentDynamics(game.dynamics, i, frozen),
            agent_constraints,
            game.x0,
            sol.trajectory.agent_controls(game.layout, i),
            opts,
        )
    except SolverFailure as exc:
        if exc.best is None:
            raise
        response = exc.best

    controls = frozen.copy()
    controls[:, sl] = response.trajectory.controls
    traj = rollout(game.dynamics, game.x0, controls)
    original = agent_cost(game, sol.trajectory, i)
    best = agent_cost(game, traj, i)
    improvement = (original - best) / max(abs(original), 1.0)
    report = BestResponseReport(
        agent=i,
        original_cost=original,
        best_cost=best,
        relative_improvement=improvement,
        feasible=response.max_violation <= opts.constraint_tol,
        trajectory=traj,
        status=response.status,
    )
    logger.info(
        "agent_best_response",
        agent=i,
        original_cost=original,
        best_cost=best,
        improvement=improvement,
        feasible=report.feasible,
    )
    return report

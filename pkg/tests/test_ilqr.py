"""
Tests for the iLQR inner solver.
"""

import numpy as np
import pytest

from potgame.engines.game import (
    DoubleMatrix,
    DynamicsModel,
    Game,
    LinearDynamics,
    StageDerivatives,
    TerminalDerivatives,
    objective_value,
    rollout,
)
from potgame.engines.ilqr import costates, ilqr_solve, linearize
from potgame.engines.lq import lqr_solve
from potgame.engines.potential import PotentialCertificate, ScaledObjective
from potgame.engines.scenarios import (
    LQ_DYADIC_A,
    LQ_DYADIC_B,
    LQ_DYADIC_X0,
    UnicycleDynamics,
    lq_dyadic_potential,
)
from potgame.engines.solution import IterationRecord, SolverOptions, SolverStatus
from potgame.errors import SolverFailure
from potgame.utils.finite_diff import central_gradient


class ConcaveControlCost:
    """-1/2 u'u: no positive definite control Hessian at any regularization below 1."""

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        return float(-0.5 * u @ u)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        return 0.0

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        n, m = x.size, u.size
        return StageDerivatives(np.zeros(n), -u, np.zeros((n, n)), -np.eye(m), np.zeros((m, n)))

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        return TerminalDerivatives(np.zeros(x.size), np.zeros((x.size, x.size)))


class GoalCost:
    """Quadratic pull of a unicycle towards (1, 1) with zero final speed."""

    goal = np.array([1.0, 1.0, 0.0, 0.0])
    Q = np.diag([1.0, 1.0, 0.0, 0.1])
    Qf = np.diag([50.0, 50.0, 0.0, 1.0])

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        e = x - self.goal
        return float(0.5 * e @ self.Q @ e + 0.05 * u @ u)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        e = x - self.goal
        return float(0.5 * e @ self.Qf @ e)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        e = x - self.goal
        return StageDerivatives(
            self.Q @ e, 0.1 * u, self.Q.copy(), 0.1 * np.eye(2), np.zeros((2, 4))
        )

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        return TerminalDerivatives(self.Qf @ (x - self.goal), self.Qf.copy())


@pytest.fixture
def lq_dynamics() -> DynamicsModel:
    return DynamicsModel([LinearDynamics(LQ_DYADIC_A, LQ_DYADIC_B)])


class TestCostates:
    """Test suite for the adjoint recursion."""

    def test_gradient_matches_finite_differences(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """grad_u from the costates is the gradient of the rolled-out objective."""
        objective = outgoing_cert.potential
        game = outgoing_game
        controls = np.random.default_rng(7).normal(size=(game.horizon, game.layout.m))
        traj = rollout(game.dynamics, game.x0, controls)
        _, grad_u = costates(linearize(objective, game.dynamics, traj))

        def total(flat: DoubleMatrix) -> float:
            u = flat.reshape(controls.shape)
            return objective_value(objective, rollout(game.dynamics, game.x0, u))

        numeric = central_gradient(total, controls.ravel())
        assert np.allclose(grad_u.ravel(), numeric, atol=1e-5)


class TestIlqrSolve:
    """Test suite for ilqr_solve."""

    def test_lq_matches_riccati(
        self, lq_dynamics: DynamicsModel, tight_options: SolverOptions
    ) -> None:
        """On an LQ problem one Newton step lands on the Riccati solution."""
        potential = lq_dyadic_potential()
        sol = ilqr_solve(
            potential.objective(),
            lq_dynamics,
            LQ_DYADIC_X0,
            opts=tight_options,
            horizon=potential.horizon,
        )
        reference = lqr_solve(potential, LQ_DYADIC_A, LQ_DYADIC_B, LQ_DYADIC_X0)

        assert sol.status is SolverStatus.CONVERGED
        assert sol.trajectory.distance(reference) <= 1e-7
        assert sol.iterations == 1
        assert sol.max_violation == 0.0

    def test_start_at_minimizer_converges(self, lq_dynamics: DynamicsModel) -> None:
        """A step that only moves the cost by round-off ends the solve as converged."""
        potential = lq_dyadic_potential()
        reference = lqr_solve(potential, LQ_DYADIC_A, LQ_DYADIC_B, LQ_DYADIC_X0)
        opts = SolverOptions(gradient_tol=1e-300, cost_tol=1e-300)
        sol = ilqr_solve(
            potential.objective(), lq_dynamics, LQ_DYADIC_X0, reference.controls, opts
        )

        assert sol.status is SolverStatus.CONVERGED
        assert sol.iterations <= 1
        assert sol.trajectory.distance(reference) <= 1e-9

    @pytest.mark.parametrize("alpha", [0.5, 2.0])
    def test_scaled_potential_same_minimizer(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate, alpha: float
    ) -> None:
        """A positive multiple of the potential has the same minimizer."""
        game = outgoing_game
        base = ilqr_solve(outgoing_cert.potential, game.dynamics, game.x0, game.zero_controls())
        scaled = ilqr_solve(
            ScaledObjective(outgoing_cert.potential, alpha),
            game.dynamics,
            game.x0,
            game.zero_controls(),
        )

        assert scaled.trajectory.distance(base.trajectory) <= 1e-6
        assert scaled.cost == pytest.approx(alpha * base.cost)

    def test_unicycle_reaches_goal(self) -> None:
        """A nonlinear single-agent problem ends near its goal."""
        dynamics = DynamicsModel([UnicycleDynamics(0.1)], dt=0.1)
        x0 = np.array([0.0, 0.0, np.pi / 4, 0.0])
        sol = ilqr_solve(GoalCost(), dynamics, x0, horizon=40)

        assert sol.status is not SolverStatus.MAX_ITERATIONS
        final = sol.trajectory.states[-1]
        assert np.hypot(final[0] - 1.0, final[1] - 1.0) < 0.1

    def test_trace_records(
        self, lq_dynamics: DynamicsModel, tight_options: SolverOptions
    ) -> None:
        """Every accepted step is reported with a non-increasing cost."""
        records: list[IterationRecord] = []
        potential = lq_dyadic_potential()
        ilqr_solve(
            potential.objective(),
            lq_dynamics,
            LQ_DYADIC_X0,
            opts=tight_options,
            trace=records.append,
            horizon=potential.horizon,
        )

        assert records
        assert [r.iteration for r in records] == list(range(1, len(records) + 1))
        costs = [r.cost for r in records]
        assert costs == sorted(costs, reverse=True)

    def test_needs_horizon_or_controls(self, lq_dynamics: DynamicsModel) -> None:
        """Without u_init the horizon must be given."""
        with pytest.raises(ValueError):
            ilqr_solve(lq_dyadic_potential().objective(), lq_dynamics, LQ_DYADIC_X0)

    def test_regularization_cap(self) -> None:
        """A control Hessian that never turns positive definite raises with the best iterate."""
        dynamics = DynamicsModel([LinearDynamics([[1.0]], [[1.0]])])
        opts = SolverOptions(regularization_max=0.5)

        with pytest.raises(SolverFailure) as exc:
            ilqr_solve(ConcaveControlCost(), dynamics, [0.0], np.ones((3, 1)), opts)
        assert exc.value.best is not None
        assert exc.value.best.status is SolverStatus.STALLED
        assert exc.value.exit_code == 4

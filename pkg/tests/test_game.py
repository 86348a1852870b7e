"""
Tests for the game core: layouts, trajectories, rollouts, costs and feasibility.
"""

import numpy as np
import pytest

from potgame.engines.game import (
    AgentLayout,
    ConstraintSet,
    DynamicsModel,
    Game,
    LinearConstraint,
    LinearDynamics,
    Trajectory,
    agent_cost,
    constraint_violation,
    feasibility_report,
    rollout,
)
from potgame.errors import DimensionMismatchError, DivergenceError
from tests.conftest import outgoing_coefficients, scalar_integrator_game


class TestAgentLayout:
    """Test suite for AgentLayout."""

    def test_slices(self) -> None:
        """Agent blocks are contiguous and ordered."""
        layout = AgentLayout((4, 2), (2, 1))

        assert layout.n == 6
        assert layout.m == 3
        assert layout.state_slice(1) == slice(4, 6)
        assert layout.control_slice(1) == slice(2, 3)

    def test_mismatched_blocks(self) -> None:
        """State and control blocks must agree on the number of agents."""
        with pytest.raises(DimensionMismatchError):
            AgentLayout((4, 4), (2,))

    def test_agent_out_of_range(self, scalar_layout: AgentLayout) -> None:
        """Unknown agent indices are rejected."""
        with pytest.raises(DimensionMismatchError):
            scalar_layout.state_slice(3)


class TestTrajectory:
    """Test suite for Trajectory."""

    def test_state_count(self) -> None:
        """T controls need T+1 states."""
        with pytest.raises(DimensionMismatchError):
            Trajectory(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_read_only(self) -> None:
        """Stored arrays cannot be modified."""
        traj = Trajectory(np.zeros((3, 1)), np.zeros((2, 1)), dt=0.5)

        with pytest.raises(ValueError):
            traj.states[0, 0] = 1.0
        assert traj.horizon == 2
        assert np.allclose(traj.times, [0.0, 0.5, 1.0])


class TestRollout:
    """Test suite for rollout."""

    @pytest.fixture
    def dynamics(self) -> DynamicsModel:
        return DynamicsModel([LinearDynamics([[1.0]], [[1.0]]), LinearDynamics([[2.0]], [[0.5]])])

    def test_linear_rollout(self, dynamics: DynamicsModel) -> None:
        """Each agent follows its own step map."""
        traj = rollout(dynamics, [0.0, 1.0], np.ones((2, 2)))

        assert np.allclose(traj.states[1], [1.0, 2.5])
        assert np.allclose(traj.states[2], [2.0, 5.5])

    def test_wrong_initial_state(self, dynamics: DynamicsModel) -> None:
        """Initial state dimension is checked against the layout."""
        with pytest.raises(DimensionMismatchError) as exc:
            rollout(dynamics, [0.0, 1.0, 2.0], np.ones((2, 2)))
        assert exc.value.exit_code == 2

    def test_divergence(self) -> None:
        """Non-finite states raise with the step index."""
        dynamics = DynamicsModel([LinearDynamics([[1e300]], [[0.0]])])

        with pytest.raises(DivergenceError) as exc:
            rollout(dynamics, [1e300], np.zeros((3, 1)))
        assert exc.value.step == 1


class TestCosts:
    """Test suite for agent costs."""

    def test_agent_cost_sums_stages(self) -> None:
        """J^i is the sum of stage costs plus the terminal cost."""
        game = scalar_integrator_game(outgoing_coefficients([2.0, 1.0]), horizon=3, seed=4)
        traj = rollout(game.dynamics, game.x0, np.full((3, 2), 0.3))
        costs = game.costs
        expected = sum(
            costs.agent_stage(0, k, traj.states[k], traj.controls[k]) for k in range(3)
        ) + costs.agent_terminal(0, 3, traj.states[-1])

        assert agent_cost(game, traj, 0) == pytest.approx(expected)

    def test_coupling_enters_with_coefficient(self) -> None:
        """Agent 0's cost counts the pair kernel with c^{01}."""
        game = scalar_integrator_game(outgoing_coefficients([2.0, 1.0]), horizon=3, seed=4)
        x = np.array([1.0, 0.0])
        u = np.zeros(2)
        own = game.costs.own[0].stage(0, x[:1], u[:1])

        assert game.costs.agent_stage(0, 0, x, u) == pytest.approx(own + 2.0 * 0.5)

    def test_gradient_matches_values(self) -> None:
        """Analytic agent gradients agree with differences of agent costs."""
        game = scalar_integrator_game(outgoing_coefficients([3.0, 1.0, 2.0]), seed=5)
        x = np.array([0.3, -0.2, 1.1])
        u = np.array([0.1, 0.4, -0.3])
        gx, gu = game.costs.agent_stage_gradient(1, 2, x, u)
        h = 1e-6
        numeric = [
            (
                game.costs.agent_stage(1, 2, x + h * e, u)
                - game.costs.agent_stage(1, 2, x - h * e, u)
            )
            / (2 * h)
            for e in np.eye(3)
        ]

        assert np.allclose(gx, numeric, atol=1e-6)
        assert gu[0] == 0.0 and gu[2] == 0.0


class TestFeasibility:
    """Test suite for feasibility_report."""

    def test_violation_kinds(self) -> None:
        """Inequalities count positive parts, equalities absolute values."""
        values = np.array([-1.0, 0.5, -0.25])
        equality = np.array([False, False, True])

        assert np.allclose(constraint_violation(values, equality), [0.0, 0.5, 0.25])

    def test_report(self) -> None:
        """A state bound is violated once the trajectory crosses it."""
        # x^0 <= 0.5 at every stage and at T
        bound = LinearConstraint([[1.0, 0.0]], None, [-0.5])
        game = scalar_integrator_game(
            np.ones((2, 2)),
            horizon=3,
            constraints=ConstraintSet([bound], [bound]),
            x0=[0.0, 0.0],
        )
        traj = rollout(game.dynamics, game.x0, np.full((3, 2), 0.25))
        report = feasibility_report(game, traj, tol=1e-9)

        assert report.dynamics_defect == pytest.approx(0.0)
        assert report.terminal_violation == pytest.approx(0.25)
        assert not report.feasible


class TestGameWindow:
    """Test suite for Game.window."""

    def test_window_offsets_coefficients(self) -> None:
        """A window reads coefficients from its absolute step."""
        game = scalar_integrator_game(np.ones((2, 2)), horizon=8)
        window = game.window(3, 4, [1.0, 2.0])

        assert window.horizon == 4
        assert window.costs.time_offset == 3
        assert np.allclose(window.x0, [1.0, 2.0])
        assert isinstance(window, Game)

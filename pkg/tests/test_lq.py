"""
Tests for the LQ engine: Riccati recursion, exact open-loop Nash and their equivalence.
"""

import numpy as np
import pytest

from potgame.engines.auglag import al_solve
from potgame.engines.game import objective_value
from potgame.engines.lq import (
    LqGame,
    LqPotential,
    agent_best_response,
    lqr_solve,
    monte_carlo_equivalence,
    nash_kkt_residual,
    open_loop_nash_exact,
    riccati,
    solve_open_loop_nash,
)
from potgame.engines.potential import PotentialStructure, certify_game
from potgame.engines.scenarios import (
    LQ_DYADIC_A,
    LQ_DYADIC_B,
    LQ_DYADIC_X0,
    double_integrator_lq_spec,
    lq_dyadic_game,
    lq_dyadic_potential,
    lq_game_from_spec,
)
from potgame.errors import (
    DimensionMismatchError,
    NumericalConditioningError,
    WrongStructureError,
)


@pytest.fixture
def game() -> LqGame:
    return lq_dyadic_game()


@pytest.fixture
def potential() -> LqPotential:
    return lq_dyadic_potential()


class TestRiccati:
    """Test suite for the potential LQR."""

    def test_value_matches_rollout(self, potential: LqPotential) -> None:
        """1/2 x0' P_0 x0 is the cost of the closed-loop rollout."""
        traj = lqr_solve(potential, LQ_DYADIC_A, LQ_DYADIC_B, LQ_DYADIC_X0)
        sol = riccati(potential, LQ_DYADIC_A, LQ_DYADIC_B)

        assert sol.value(LQ_DYADIC_X0) == pytest.approx(
            objective_value(potential.objective(), traj), rel=1e-10
        )

    def test_indefinite_control_cost(self) -> None:
        """R must be positive definite."""
        with pytest.raises(NumericalConditioningError):
            LqPotential.from_blocks(np.eye(2), np.zeros((1, 1)), horizon=3)


class TestOpenLoopNash:
    """Test suite for the stacked first-order system."""

    def test_kkt_residual(self, game: LqGame) -> None:
        """The exact equilibrium satisfies every agent's first-order conditions."""
        traj = open_loop_nash_exact(game)

        assert nash_kkt_residual(game, traj) <= 1e-9

    def test_unilateral_optimality(self, game: LqGame) -> None:
        """No agent changes its controls when re-optimizing alone."""
        traj = open_loop_nash_exact(game)
        for i in range(game.num_agents):
            reply = agent_best_response(game, traj, i)
            assert reply.distance(traj) <= 1e-8
            assert game.agent_cost(reply, i) >= game.agent_cost(traj, i) - 1e-9

    def test_costates_shape(self, game: LqGame) -> None:
        """One costate sequence per agent."""
        sol = solve_open_loop_nash(game)

        assert sol.costates.shape == (2, game.horizon + 1, game.n)
        assert sol.agents == (0, 1)

    def test_missing_control_cost(self) -> None:
        """Every agent needs its own R^ii block."""
        with pytest.raises(DimensionMismatchError):
            LqGame.from_blocks(
                LQ_DYADIC_A,
                LQ_DYADIC_B,
                [np.eye(4), np.eye(4)],
                {(0, 0): [[1.0]]},
                (1, 1),
                LQ_DYADIC_X0,
                5,
            )


class TestEquivalence:
    """Test suite for potential-LQR versus open-loop Nash."""

    def test_dyadic_example_game(self, game: LqGame, potential: LqPotential) -> None:
        """Both solutions coincide from x0 = (3, 2, 4, 5)."""
        nash = open_loop_nash_exact(game)
        opt = lqr_solve(potential, game.A, game.B, game.x0)

        assert opt.distance(nash) <= 1e-8

    def test_monte_carlo(self, game: LqGame, potential: LqPotential) -> None:
        """200 initial states in an inf-ball of radius 0.5 all agree."""
        report = monte_carlo_equivalence(game, potential, n=200, radius=0.5, seed=0)

        assert report.equivalent
        assert report.deviations.shape == (200,)
        assert report.mean_potential.shape == (game.horizon + 1, game.n)

    def test_single_run(self, game: LqGame, potential: LqPotential) -> None:
        """n = 1 with radius 0 reduces to the nominal comparison."""
        report = monte_carlo_equivalence(game, potential, n=1, radius=0.0)
        nominal = lqr_solve(potential, game.A, game.B, game.x0).distance(
            open_loop_nash_exact(game)
        )

        assert report.max_deviation == pytest.approx(nominal, abs=1e-15)
        assert np.allclose(report.std_nash, 0.0)

    def test_structured_form(self, game: LqGame) -> None:
        """The structured rewrite certifies as dyadic and the solver recovers the Nash."""
        structured = game.to_structured_game()
        cert = certify_game(structured, "dyadic")
        sol = al_solve(structured, cert)

        assert cert.structure is PotentialStructure.DYADIC
        assert np.all(cert.weights == 1.0)
        assert sol.converged
        assert sol.trajectory.distance(open_loop_nash_exact(game)) <= 1e-6

    def test_structured_form_needs_shared_coupling(self) -> None:
        """Different Q_12 blocks have no structured form."""
        Q2 = np.eye(4)
        Q2[0, 2] = Q2[2, 0] = 0.5
        game = LqGame.from_blocks(
            LQ_DYADIC_A,
            LQ_DYADIC_B,
            [np.eye(4), Q2],
            {(0, 0): [[1.0]], (1, 1): [[1.0]]},
            (1, 1),
            LQ_DYADIC_X0,
            5,
            (2, 2),
        )

        with pytest.raises(WrongStructureError):
            game.to_structured_game()

    def test_double_integrator_scenario(self) -> None:
        """The LQ scenario's solver output matches its exact equilibrium."""
        spec = double_integrator_lq_spec()
        lq = lq_game_from_spec(spec)

        assert lq.num_agents == 2
        assert nash_kkt_residual(lq, open_loop_nash_exact(lq)) <= 1e-9

"""
Tests for the augmented Lagrangian solver and single-agent best responses.
"""

import dataclasses
import math

import numpy as np
import pytest

from potgame.engines.auglag import (
    agent_best_response,
    al_solve,
    complementarity,
    constraint_values,
    update_multipliers,
)
from potgame.engines.game import ConstraintSet, Game, LinearConstraint, rollout
from potgame.engines.ilqr import ilqr_solve
from potgame.engines.potential import PotentialCertificate, certify_game
from potgame.engines.scenarios import ScenarioSpec, build_game, certify_scenario
from potgame.engines.simulator import compute_run_metrics
from potgame.engines.solution import SolverOptions
from potgame.errors import CertificateMismatchError, SolverFailure
from tests.conftest import outgoing_coefficients, scalar_integrator_game

X0 = [2.0, -1.0, 0.5]


def control_floor(bound: float) -> LinearConstraint:
    """u^0 >= -bound, i.e. -u^0 - bound <= 0."""
    return LinearConstraint(np.zeros((1, 3)), [[-1.0, 0.0, 0.0]], [-bound])


@pytest.fixture
def bounded_game() -> Game:
    return scalar_integrator_game(
        np.ones((3, 3)), horizon=6, seed=1, constraints=ConstraintSet([control_floor(0.2)]), x0=X0
    )


class TestMultiplierUpdates:
    """Test suite for the PHR multiplier update."""

    def test_inequality_rows_clamp(self) -> None:
        """Inequality multipliers stay non-negative, equality multipliers do not."""
        g = np.array([-3.0, 0.5, -3.0])
        lam = np.array([1.0, 0.0, 1.0])
        eq = np.array([False, False, True])

        assert np.allclose(update_multipliers(g, lam, 1.0, eq), [0.0, 0.5, -2.0])

    def test_complementarity_ignores_equalities(self) -> None:
        """Only inequality rows enter |lam g|."""
        g = np.array([-0.5, 2.0])
        lam = np.array([2.0, 3.0])

        assert complementarity(g, lam, np.array([False, True])) == pytest.approx(1.0)


class TestAlSolve:
    """Test suite for al_solve."""

    def test_unconstrained_matches_ilqr(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """Without constraints the outer loop is a single iLQR solve."""
        sol = al_solve(outgoing_game, outgoing_cert)
        inner = ilqr_solve(
            outgoing_cert.potential,
            outgoing_game.dynamics,
            outgoing_game.x0,
            outgoing_game.zero_controls(),
        )

        assert sol.converged
        assert sol.outer_iterations == 0
        assert sol.delta.shape == (outgoing_game.horizon, 0)
        assert sol.trajectory.distance(inner.trajectory) <= 1e-12

    def test_control_bound_respected(self, bounded_game: Game) -> None:
        """The active bound holds and carries non-positive multipliers."""
        cert = certify_game(bounded_game, "exact")
        sol = al_solve(bounded_game, cert)

        assert sol.converged
        assert sol.max_violation <= 1e-6
        assert np.all(sol.trajectory.controls[:, 0] >= -0.2 - 1e-6)
        assert np.all(sol.delta <= 0.0)
        assert np.min(sol.delta) < -1e-6
        assert sol.complementarity <= 1e-6

    def test_terminal_equality(self) -> None:
        """x^0_T = x^1_T is met to the constraint tolerance."""
        meet = LinearConstraint([[1.0, -1.0, 0.0]], None, [0.0], equality=True)
        game = scalar_integrator_game(
            np.ones((3, 3)), horizon=6, seed=1, constraints=ConstraintSet([], [meet]), x0=X0
        )
        sol = al_solve(game, certify_game(game, "exact"))
        final = sol.trajectory.states[-1]

        assert sol.converged
        assert abs(final[0] - final[1]) <= 1e-6
        assert sol.delta_terminal.shape == (1,)

    def test_penalty_cap(self) -> None:
        """Contradictory bounds exhaust the penalty and raise with the best iterate."""
        floor = control_floor(-1.0)  # u^0 >= 1
        ceiling = LinearConstraint(np.zeros((1, 3)), [[1.0, 0.0, 0.0]], [1.0])  # u^0 <= -1
        game = scalar_integrator_game(
            np.ones((3, 3)), horizon=4, constraints=ConstraintSet([floor, ceiling])
        )

        with pytest.raises(SolverFailure) as exc:
            al_solve(game, certify_game(game, "exact"), opts=SolverOptions(penalty_max=100.0))
        assert exc.value.best is not None
        assert exc.value.best.max_violation >= 0.9
        assert exc.value.detail["penalty"] == pytest.approx(100.0)

    def test_certificate_of_another_game(self, bounded_game: Game, outgoing_game: Game) -> None:
        """The certificate must come from the game being solved."""
        cert = certify_game(outgoing_game, "uniform_outgoing")

        with pytest.raises(CertificateMismatchError):
            al_solve(bounded_game, cert)


class TestBestResponse:
    """Test suite for agent_best_response."""

    @pytest.mark.parametrize("coefficients", [np.ones((3, 3)), [10.0, 1.0, 1.0]])
    def test_no_profitable_deviation(self, coefficients: object) -> None:
        """At the potential minimizer no agent improves by re-optimizing alone."""
        c = np.asarray(coefficients, dtype=np.float64)
        c = c if c.ndim == 2 else outgoing_coefficients(c)
        game = scalar_integrator_game(c, horizon=6, seed=2)
        sol = al_solve(game, certify_game(game), opts=SolverOptions(gradient_tol=1e-9))

        for i in game.agents:
            report = agent_best_response(game, sol, i)
            assert report.relative_improvement <= 1e-6
            assert report.feasible

    def test_perturbed_solution_improves(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """Away from the equilibrium an agent gains by deviating."""
        sol = al_solve(outgoing_game, outgoing_cert)
        controls = np.array(sol.trajectory.controls)
        controls[:, 1] += 0.5
        perturbed = dataclasses.replace(
            sol, trajectory=rollout(outgoing_game.dynamics, outgoing_game.x0, controls)
        )

        report = agent_best_response(outgoing_game, perturbed, 1)
        assert report.relative_improvement > 1e-3
        assert report.best_cost < report.original_cost

    def test_constrained_response(self, bounded_game: Game) -> None:
        """The constrained agent's response respects its bound."""
        sol = al_solve(bounded_game, certify_game(bounded_game, "exact"))
        report = agent_best_response(bounded_game, sol, 0)

        assert report.feasible
        assert report.relative_improvement <= 1e-5
        assert np.all(report.trajectory.controls[:, 0] >= -0.2 - 1e-6)


class TestCollisionAvoidance:
    """Test suite for solves with an active separation constraint."""

    def test_head_on_complementarity(self, tight_options: SolverOptions) -> None:
        """Two unicycles meeting head on pass at the collision distance."""
        spec = ScenarioSpec.model_validate(
            {
                "name": "head_on",
                "agents": [
                    {"start": [0.0, 0.0, 0.0, 0.0], "goal": [3.0, 0.0, 0.0, 0.0]},
                    {"start": [3.0, 0.05, math.pi, 0.0], "goal": [0.0, 0.05, math.pi, 0.0]},
                ],
                "coupling": {"structure": "exact"},
                "constraints": {"d_collision": 0.3, "u_bound": 1.0},
                "horizon": {"seconds": 5.0, "dt": 0.1},
            }
        )
        game = build_game(spec)
        sol = al_solve(game, certify_scenario(spec, game), opts=tight_options)
        g, _ = constraint_values(game.constraints, sol.trajectory)
        metrics = compute_run_metrics(game, sol.trajectory)

        assert sol.converged
        assert sol.max_violation <= 1e-6
        assert metrics.min_pairwise_distance == pytest.approx(0.3, abs=1e-4)
        assert np.any(sol.delta < 0.0)
        assert np.all(sol.delta <= 0.0)
        assert np.max(np.abs(sol.delta * g)) <= 1e-6

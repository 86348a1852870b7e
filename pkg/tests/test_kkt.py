"""
Tests for the per-agent KKT check.
"""

import dataclasses

import numpy as np
import pytest

from potgame.engines.auglag import al_solve
from potgame.engines.game import ConstraintSet, Game, LinearConstraint
from potgame.engines.kkt import kkt_check
from potgame.engines.potential import PotentialCertificate, certify_game
from potgame.engines.solution import SolverOptions, SolverStatus
from tests.conftest import incoming_coefficients, outgoing_coefficients, scalar_integrator_game


@pytest.fixture
def constrained_game() -> Game:
    # u^0 >= -0.2 on every stage
    floor = LinearConstraint(np.zeros((1, 3)), [[-1.0, 0.0, 0.0]], [-0.2])
    return scalar_integrator_game(
        np.ones((3, 3)), horizon=6, seed=1, constraints=ConstraintSet([floor]), x0=[2.0, -1.0, 0.5]
    )


class TestKktCheck:
    """Test suite for kkt_check."""

    def test_unconstrained_weighted(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """Weighted dynamics multipliers satisfy every agent's conditions."""
        sol = al_solve(outgoing_game, outgoing_cert, opts=SolverOptions(gradient_tol=1e-10))
        report = kkt_check(outgoing_game, outgoing_cert, sol)

        assert report.passed
        assert not report.partial
        assert report.dynamics_multipliers.shape == (3, outgoing_game.horizon, 3)
        assert np.allclose(report.dynamics_multipliers[1], 0.1 * sol.xi)

    def test_constrained(self, constrained_game: Game) -> None:
        """Active inequality multipliers are shared through the weights."""
        cert = certify_game(constrained_game, "exact")
        sol = al_solve(constrained_game, cert)
        report = kkt_check(constrained_game, cert, sol, tol=1e-4)

        assert report.passed
        assert np.all(report.constraint_multipliers <= 0.0)
        assert report.dual == 0.0
        for i in constrained_game.agents:
            assert report.agent_residual(i) <= 1e-4

    def test_wrong_weights_fail(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """Unit weights do not fit a weighted potential game."""
        sol = al_solve(outgoing_game, outgoing_cert, opts=SolverOptions(gradient_tol=1e-10))
        ones = np.ones((3, outgoing_game.horizon + 1))

        assert not kkt_check(outgoing_game, outgoing_cert, sol, weights=ones).passed

    def test_unconverged_is_partial(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """A solution that did not converge yields a partial report."""
        sol = al_solve(outgoing_game, outgoing_cert)
        stalled = dataclasses.replace(sol, status=SolverStatus.MAX_ITERATIONS)
        report = kkt_check(outgoing_game, outgoing_cert, stalled)

        assert report.partial
        assert not report.passed

    def test_missing_multipliers(
        self, outgoing_game: Game, outgoing_cert: PotentialCertificate
    ) -> None:
        """Multipliers of the wrong shape are replaced by zeros and flagged."""
        sol = al_solve(outgoing_game, outgoing_cert)
        bare = dataclasses.replace(sol, xi=np.zeros((0, 3)))

        assert kkt_check(outgoing_game, outgoing_cert, bare).partial

    def test_time_varying_weights(self) -> None:
        """Per-step weights still give a report; the residual is reported as measured."""
        c = np.ones((3, 3, 7))
        c[0, :, 3:] = 2.0
        game = scalar_integrator_game(c, horizon=6)
        cert = certify_game(game, "uniform_outgoing")
        report = kkt_check(game, cert, al_solve(game, cert))

        assert report.stationarity_u.shape == (3, 6)
        assert np.isfinite(report.max_residual)


def random_coefficients(structure: str, num_agents: int, rng: np.random.Generator) -> np.ndarray:
    c = rng.uniform(0.5, 2.0, size=num_agents)
    if structure == "uniform_outgoing":
        return outgoing_coefficients(c)
    if structure == "uniform_incoming":
        return incoming_coefficients(c)
    if structure == "dyadic":
        return np.array([[1.0, c[0]], [c[1], 1.0]])
    return np.ones((num_agents, num_agents))


RANDOM_GAMES = [
    (structure, N, T, active)
    for structure in ("dyadic", "uniform_outgoing", "uniform_incoming", "exact")
    for N in (2, 3, 4)
    for T in (5, 20)
    for active in (False, True)
    if structure != "dyadic" or N == 2
]


class TestRandomGames:
    """KKT conditions at the potential minimizer of random certified games."""

    @pytest.mark.parametrize("structure,N,T,active", RANDOM_GAMES)
    def test_kkt_holds(
        self, structure: str, N: int, T: int, active: bool, tight_options: SolverOptions
    ) -> None:
        seed = 10 * N + T + int(active)
        c = random_coefficients(structure, N, np.random.default_rng(seed))
        game = scalar_integrator_game(c, horizon=T, seed=seed)
        cert = certify_game(game, structure)
        if active:
            # push agent 0's control floor above its unconstrained minimum
            free = al_solve(game, cert, opts=tight_options).trajectory.controls[:, 0]
            floor = float(np.min(free)) + 0.1
            gu = np.zeros((1, N))
            gu[0, 0] = -1.0
            bound = LinearConstraint(np.zeros((1, N)), gu, [floor])
            game = dataclasses.replace(game, constraints=ConstraintSet([bound]))
        sol = al_solve(game, cert, opts=tight_options)
        report = kkt_check(game, cert, sol, tol=1e-6)

        assert cert.structure.value == structure
        assert sol.converged
        assert report.passed
        if active:
            assert np.min(sol.trajectory.controls[:, 0]) == pytest.approx(floor, abs=1e-6)
            assert np.any(report.constraint_multipliers < 0.0)

    def test_grid_covers_structures(self) -> None:
        assert len(RANDOM_GAMES) >= 20
        assert {game[0] for game in RANDOM_GAMES} == {
            "dyadic",
            "uniform_outgoing",
            "uniform_incoming",
            "exact",
        }
        assert sum(game[3] for game in RANDOM_GAMES) * 2 == len(RANDOM_GAMES)

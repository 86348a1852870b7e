"""
Tests for potential certification and verification.
"""

import dataclasses

import numpy as np
import pytest

from potgame.engines.game import (
    AgentLayout,
    Game,
    QuadraticOwnCost,
    QuadraticPairKernel,
    StructuredCost,
    rollout,
)
from potgame.engines.potential import (
    PotentialCertificate,
    PotentialStructure,
    certify,
    certify_game,
    check_kernel_symmetry,
    decomposition_remainder,
    detect_structure,
    verify_derivative_conditions,
    verify_potential_property,
    weights_table,
)
from potgame.engines.scenarios import (
    build_game,
    certify_scenario,
    four_agent_swap_spec,
    three_agent_asymmetric_spec,
)
from potgame.errors import AsymmetricKernelError, CertificateMismatchError, WrongStructureError
from tests.conftest import incoming_coefficients, outgoing_coefficients, scalar_integrator_game


class TestCertifiers:
    """Test suite for the structure certifiers."""

    def test_exact(self, exact_game: Game) -> None:
        """Unit coefficients give unit weights."""
        cert = certify_game(exact_game, "exact")

        assert cert.structure is PotentialStructure.EXACT
        assert cert.is_exact
        assert np.all(cert.weights == 1.0)

    def test_dyadic_weights(self) -> None:
        """w^1 = 1/c^2 and w^2 = 1/c^1 with p = c^1 c^2."""
        c = np.array([[1.0, 2.0], [4.0, 1.0]])
        game = scalar_integrator_game(c)
        cert = certify_game(game, "dyadic")

        assert cert.weight(0, 0) == pytest.approx(0.25)
        assert cert.weight(1, 0) == pytest.approx(0.5)
        assert cert.pair_scale(0, 1, 0) == pytest.approx(8.0)

    def test_dyadic_needs_two_agents(self, exact_game: Game) -> None:
        """The dyadic certifier rejects three agents."""
        with pytest.raises(WrongStructureError):
            certify_game(exact_game, "dyadic")

    def test_uniform_outgoing_weights(self, outgoing_cert: PotentialCertificate) -> None:
        """c = (10, 1, 1) gives w = (1, 0.1, 0.1)."""
        assert np.allclose(outgoing_cert.weights_at(0), [1.0, 0.1, 0.1])
        assert outgoing_cert.time_invariant_weights

    def test_uniform_incoming_weights(self) -> None:
        """w^i = 1 / c^i."""
        game = scalar_integrator_game(incoming_coefficients([2.0, 4.0, 5.0]))
        cert = certify_game(game, "uniform_incoming")

        assert np.allclose(cert.weights_at(0), [0.5, 0.25, 0.2])
        assert cert.pair_scale(1, 2, 0) == pytest.approx(20.0)

    def test_outgoing_violation(self) -> None:
        """c^{12} != c^{13} is not uniform outgoing."""
        c = outgoing_coefficients([1.0, 1.0, 1.0])
        c[0, 1] = 2.0
        game = scalar_integrator_game(c)

        with pytest.raises(WrongStructureError) as exc:
            certify_game(game, "uniform_outgoing")
        assert exc.value.exit_code == 3
        assert "offending" in exc.value.detail

    def test_detection_order(self) -> None:
        """Exact wins over the uniform structures; mixed structures are rejected."""
        assert detect_structure(scalar_integrator_game(np.ones((3, 3))).costs) == "exact"
        outgoing = scalar_integrator_game(outgoing_coefficients([3.0, 1.0, 2.0])).costs
        incoming = scalar_integrator_game(incoming_coefficients([3.0, 1.0, 2.0])).costs
        assert detect_structure(outgoing) is PotentialStructure.UNIFORM_OUTGOING
        assert detect_structure(incoming) is PotentialStructure.UNIFORM_INCOMING

        mixed = np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 4.0], [5.0, 1.0, 1.0]])
        with pytest.raises(WrongStructureError):
            certify(scalar_integrator_game(mixed).costs)

    def test_time_varying_weights(self) -> None:
        """Per-step coefficients give per-step weights."""
        c = np.ones((3, 3, 7))
        c[0, :, 3:] = 2.0
        game = scalar_integrator_game(c, horizon=6)
        cert = certify_game(game, "uniform_outgoing")

        assert not cert.time_invariant_weights
        table = weights_table(cert, [0, 6])
        assert table[1] == pytest.approx([1.0, 0.5])


class TestKernelSymmetry:
    """Test suite for check_kernel_symmetry."""

    def test_asymmetric_kernels(self) -> None:
        """Mismatched L^{01} and L^{10} are detected."""
        layout = AgentLayout((1, 1), (1, 1))
        own = [QuadraticOwnCost([[1.0]], [[1.0]]) for _ in range(2)]
        kernels = {
            (0, 1): QuadraticPairKernel([[1.0]], [[-1.0]], [[1.0]]),
            (1, 0): QuadraticPairKernel([[2.0]], [[0.0]], [[0.0]]),
        }
        costs = StructuredCost(layout, tuple(own), kernels, np.ones((2, 2)))

        with pytest.raises(AsymmetricKernelError) as exc:
            check_kernel_symmetry(costs)
        assert exc.value.detail["residual"] > 1e-9

    def test_symmetric_builder(self, exact_game: Game) -> None:
        """Kernels built with StructuredCost.symmetric pass."""
        assert check_kernel_symmetry(exact_game.costs) <= 1e-12


class TestVerification:
    """Test suite for the numerical potential checks."""

    @pytest.mark.parametrize(
        "coefficients, structure",
        [
            (np.ones((3, 3)), "exact"),
            (np.array([[1.0, 3.0], [0.5, 1.0]]), "dyadic"),
            (outgoing_coefficients([10.0, 1.0, 1.0]), "uniform_outgoing"),
            (incoming_coefficients([2.0, 1.0, 4.0, 0.5]), "uniform_incoming"),
        ],
    )
    def test_potential_property(self, coefficients: np.ndarray, structure: str) -> None:
        """Unilateral deviations change J^i and w^i times the potential equally."""
        game = scalar_integrator_game(coefficients, horizon=5, seed=3)
        cert = certify_game(game, structure)

        report = verify_potential_property(game, cert, samples=50)
        assert report.passed
        assert report.max_residual <= 1e-8

    def test_broken_weights_fail(self, outgoing_game: Game) -> None:
        """A certificate with the wrong weights fails the property."""
        cert = certify_game(outgoing_game, "uniform_outgoing")
        broken = dataclasses.replace(cert, weights=cert.weights * 2.0)

        report = verify_potential_property(outgoing_game, broken, samples=20)
        assert not report.passed

    def test_derivative_conditions(self, outgoing_game: Game) -> None:
        """Agent cost gradients equal the weighted potential gradients."""
        cert = certify_game(outgoing_game, "uniform_outgoing")

        assert verify_derivative_conditions(outgoing_game, cert, samples=20).passed
        assert verify_derivative_conditions(
            outgoing_game, cert, samples=20, tol=1e-10, method="analytic"
        ).passed

    def test_remainder_ignores_own_controls(self, outgoing_game: Game) -> None:
        """J^i minus its weighted potential does not depend on agent i's controls."""
        cert = certify_game(outgoing_game, "uniform_outgoing")
        rng = np.random.default_rng(0)
        controls = rng.normal(size=(outgoing_game.horizon, 3))
        deviated = controls.copy()
        deviated[:, 1] += rng.normal(size=outgoing_game.horizon)

        base = rollout(outgoing_game.dynamics, outgoing_game.x0, controls)
        other = rollout(outgoing_game.dynamics, outgoing_game.x0, deviated)
        assert decomposition_remainder(outgoing_game, cert, base, 1) == pytest.approx(
            decomposition_remainder(outgoing_game, cert, other, 1), abs=1e-9
        )

    def test_certificate_mismatch(self, outgoing_game: Game, exact_game: Game) -> None:
        """A certificate cannot be used with another game's costs."""
        cert = certify_game(exact_game, "exact")

        with pytest.raises(CertificateMismatchError):
            verify_potential_property(outgoing_game, cert, samples=1)


class TestScenarioCertificates:
    """Test suite for the shipped scenarios' certificates."""

    def test_four_agent_swap(self) -> None:
        """The swap scenario is uniform outgoing with unit weights."""
        spec = four_agent_swap_spec()
        cert = certify_scenario(spec)

        assert cert.structure is PotentialStructure.UNIFORM_OUTGOING
        assert np.all(cert.weights == 1.0)

    def test_three_agent_asymmetric(self) -> None:
        """c = (10, 1, 1) gives weights (1, 0.1, 0.1)."""
        spec = three_agent_asymmetric_spec()
        game = build_game(spec)
        cert = certify_scenario(spec, game)

        assert np.allclose(cert.weights_at(0), [1.0, 0.1, 0.1])
        assert verify_potential_property(game, cert, samples=10).passed

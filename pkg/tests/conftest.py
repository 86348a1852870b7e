"""
Shared builders for the potgame test suite.
"""

from typing import Optional, Sequence

import numpy as np
import pytest

from potgame.engines.game import (
    AgentLayout,
    ConstraintSet,
    DynamicsModel,
    Game,
    LinearDynamics,
    QuadraticOwnCost,
    QuadraticPairKernel,
    StructuredCost,
)
from potgame.engines.potential import PotentialCertificate, certify_game
from potgame.engines.solution import SolverOptions


def scalar_integrator_game(
    coefficients: object,
    horizon: int = 5,
    seed: int = 0,
    constraints: Optional[ConstraintSet] = None,
    x0: Optional[Sequence[float]] = None,
) -> Game:
    """
    N scalar integrators x^i_{k+1} = x^i_k + u^i_k with random quadratic own
    costs and the symmetric kernel 1/2 (x^i - x^j)^2 on every pair.
    """
    c = np.asarray(coefficients, dtype=np.float64)
    N = c.shape[0]
    rng = np.random.default_rng(seed)
    dynamics = DynamicsModel([LinearDynamics([[1.0]], [[1.0]]) for _ in range(N)])
    own = [
        QuadraticOwnCost(
            [[rng.uniform(0.5, 2.0)]], [[rng.uniform(0.5, 2.0)]], [[rng.uniform(1.0, 5.0)]]
        )
        for _ in range(N)
    ]
    kernel = QuadraticPairKernel([[1.0]], [[-1.0]], [[1.0]])
    kernels = {(i, j): kernel for i in range(N) for j in range(i + 1, N)}
    costs = StructuredCost.symmetric(dynamics.layout, own, kernels, c)
    start = rng.uniform(-2.0, 2.0, size=N) if x0 is None else np.asarray(x0, dtype=np.float64)
    return Game(dynamics, costs, constraints or ConstraintSet(), start, horizon)


def outgoing_coefficients(c: Sequence[float]) -> np.ndarray:
    """c^{ij} = c^i."""
    values = np.asarray(c, dtype=np.float64)
    return np.tile(values[:, np.newaxis], (1, values.size))


def incoming_coefficients(c: Sequence[float]) -> np.ndarray:
    """c^{ij} = c^j."""
    values = np.asarray(c, dtype=np.float64)
    return np.tile(values, (values.size, 1))


@pytest.fixture
def scalar_layout() -> AgentLayout:
    return AgentLayout((1, 1, 1), (1, 1, 1))


@pytest.fixture
def exact_game() -> Game:
    return scalar_integrator_game(np.ones((3, 3)), horizon=6, seed=1)


@pytest.fixture
def outgoing_game() -> Game:
    return scalar_integrator_game(outgoing_coefficients([10.0, 1.0, 1.0]), horizon=6, seed=2)


@pytest.fixture
def outgoing_cert(outgoing_game: Game) -> PotentialCertificate:
    return certify_game(outgoing_game, "uniform_outgoing")


@pytest.fixture
def tight_options() -> SolverOptions:
    return SolverOptions(gradient_tol=1e-9, constraint_tol=1e-8, cost_tol=1e-14)


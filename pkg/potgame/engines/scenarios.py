"""
Scenarios - concrete agents, costs and constraints, and the scenario builders.

Agents are unicycles (state [p, q, theta, v], controls [omega, alpha]) or
planar double integrators (state [p, q, vp, vq], controls [ap, aq]); the
first two state entries are always the planar position, which is what the
proximity kernel and the distance constraints read.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from potgame.config import settings
from potgame.engines.game import (
    AgentDynamics,
    AgentId,
    AgentLayout,
    Constraint,
    ConstraintSet,
    DoubleMatrix,
    DynamicsModel,
    Game,
    LinearDynamics,
    OwnCost,
    PairKernel,
    StageDerivatives,
    StepArray,
    StructuredCost,
    TerminalDerivatives,
    Trajectory,
)
from potgame.engines.lq import LqGame, LqPotential, open_loop_nash_exact
from potgame.engines.potential import PotentialCertificate, PotentialStructure, certify_game
from potgame.engines.solution import SolverOptions
from potgame.errors import WrongStructureError
from potgame.utils.logger import get_logger

logger = get_logger(__name__)

# Below this separation the direction between two agents is undefined
_MIN_SEPARATION = 1e-12

SQUARE_SIDE = 3.0
SWAP_CORNERS: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = (
    ((0.0, 0.0), (3.0, 3.0)),
    ((3.0, 0.0), (0.0, 3.0)),
    ((3.0, 3.0), (0.0, 0.0)),
    ((0.0, 3.0), (3.0, 0.0)),
)


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnicycleState:
    p: float
    q: float
    theta: float
    v: float

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "UnicycleState":
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))

    def to_array(self) -> DoubleMatrix:
        return np.array([self.p, self.q, self.theta, self.v])

    @property
    def wrapped_theta(self) -> float:
        return wrap_angle(self.theta)


def unicycle_step(
    x: Union[UnicycleState, DoubleMatrix], u: DoubleMatrix, dt: float
) -> Union[UnicycleState, DoubleMatrix]:
    """Explicit Euler step of the unicycle; the heading is integrated unwrapped."""
    state = x.to_array() if isinstance(x, UnicycleState) else np.asarray(x, dtype=np.float64)
    nxt = UnicycleDynamics(dt).step(state, np.asarray(u, dtype=np.float64))
    return UnicycleState.from_array(nxt) if isinstance(x, UnicycleState) else nxt


class UnicycleDynamics(AgentDynamics):
    state_dim = 4
    control_dim = 2

    def __init__(self, dt: float) -> None:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = float(dt)

    def step(self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0) -> DoubleMatrix:
        p, q, theta, v = x
        omega, alpha = u
        dt = self.dt
        return np.array(
            [
                p + dt * v * math.cos(theta),
                q + dt * v * math.sin(theta),
                theta + dt * omega,
                v + dt * alpha,
            ]
        )

    def jacobians(
        self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        A, B = self.jacobians_batch(np.array([k]), np.atleast_2d(x), np.atleast_2d(u))
        return A[0], B[0]

    def jacobians_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        theta, v = states[:, 2], states[:, 3]
        dt = self.dt
        T = len(steps)
        A = np.tile(np.eye(4), (T, 1, 1))
        A[:, 0, 2] = -dt * v * np.sin(theta)
        A[:, 0, 3] = dt * np.cos(theta)
        A[:, 1, 2] = dt * v * np.cos(theta)
        A[:, 1, 3] = dt * np.sin(theta)
        B = np.zeros((T, 4, 2))
        B[:, 2, 0] = dt
        B[:, 3, 1] = dt
        return A, B


class DoubleIntegratorDynamics(LinearDynamics):
    """Planar double integrator, explicit Euler: p+ = p + dt v, v+ = v + dt a."""

    def __init__(self, dt: float) -> None:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        A = np.eye(4)
        A[0, 2] = A[1, 3] = dt
        B = np.zeros((4, 2))
        B[2, 0] = B[3, 1] = dt
        super().__init__(A, B)
        self.dt = float(dt)


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


def _separation(a: DoubleMatrix, b: DoubleMatrix) -> tuple[DoubleMatrix, float]:
    delta = np.asarray(a, dtype=np.float64)[:2] - np.asarray(b, dtype=np.float64)[:2]
    return delta, float(np.hypot(delta[0], delta[1]))


def _separations(a: DoubleMatrix, b: DoubleMatrix) -> tuple[DoubleMatrix, DoubleMatrix]:
    """Row-wise ``_separation`` for (T, n) state rows."""
    delta = a[:, :2] - b[:, :2]
    return delta, np.hypot(delta[:, 0], delta[:, 1])


def proximity_cost(xi: DoubleMatrix, xj: DoubleMatrix, d_m: float) -> float:
    """(d - d_m)^2 inside the threshold, 0 outside; d is the planar distance."""
    if not d_m > 0:
        raise ValueError(f"d_m must be positive, got {d_m}")
    _, d = _separation(xi, xj)
    return (d - d_m) ** 2 if d < d_m else 0.0


class ProximityKernel(PairKernel):
    """Symmetric avoidance kernel; Gauss-Newton Hessian of the squared hinge."""

    def __init__(self, d_m: float) -> None:
        if not d_m > 0:
            raise ValueError(f"d_m must be positive, got {d_m}")
        self.d_m = float(d_m)

    def value(self, k: int, a: DoubleMatrix, b: DoubleMatrix) -> float:
        return proximity_cost(a, b, self.d_m)

    def gradient(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        ga, gb = np.zeros(len(a)), np.zeros(len(b))
        delta, d = _separation(a, b)
        if _MIN_SEPARATION < d < self.d_m:
            g = 2.0 * (d - self.d_m) * delta / d
            ga[:2] = g
            gb[:2] = -g
        return ga, gb

    def hessian(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        na, nb = len(a), len(b)
        haa, hab, hbb = np.zeros((na, na)), np.zeros((na, nb)), np.zeros((nb, nb))
        delta, d = _separation(a, b)
        if _MIN_SEPARATION < d < self.d_m:
            e = delta / d
            block = 2.0 * np.outer(e, e)
            haa[:2, :2] = block
            hab[:2, :2] = -block
            hbb[:2, :2] = block
        return haa, hab, hbb

    def _active(self, a: DoubleMatrix, b: DoubleMatrix) -> tuple[DoubleMatrix, DoubleMatrix]:
        """Unit directions and distances, with directions zeroed outside the threshold."""
        delta, d = _separations(a, b)
        inside = (d > _MIN_SEPARATION) & (d < self.d_m)
        e = np.zeros_like(delta)
        np.divide(delta, d[:, np.newaxis], out=e, where=inside[:, np.newaxis])
        return e, d

    def value_batch(self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix) -> DoubleMatrix:
        _, d = _separations(a, b)
        return np.where(d < self.d_m, (d - self.d_m) ** 2, 0.0)

    def gradient_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        e, d = self._active(a, b)
        g = 2.0 * (d - self.d_m)[:, np.newaxis] * e
        ga, gb = np.zeros(a.shape), np.zeros(b.shape)
        ga[:, :2] = g
        gb[:, :2] = -g
        return ga, gb

    def hessian_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        e, _ = self._active(a, b)
        block = 2.0 * e[:, :, np.newaxis] * e[:, np.newaxis, :]
        T, na, nb = len(steps), a.shape[1], b.shape[1]
        haa, hab, hbb = np.zeros((T, na, na)), np.zeros((T, na, nb)), np.zeros((T, nb, nb))
        haa[:, :2, :2] = block
        hab[:, :2, :2] = -block
        hbb[:, :2, :2] = block
        return haa, hab, hbb


def quadratic_tracking_cost(
    x: DoubleMatrix,
    u: Optional[DoubleMatrix],
    Q: DoubleMatrix,
    C: Optional[DoubleMatrix],
    x_f: DoubleMatrix,
) -> float:
    """1/2 (x - x_f)'Q(x - x_f) + 1/2 u'Cu; pass u=None for the terminal form."""
    e = np.asarray(x, dtype=np.float64) - x_f
    value = 0.5 * e @ Q @ e
    if u is not None and C is not None:
        u = np.asarray(u, dtype=np.float64)
        value += 0.5 * u @ C @ u
    return float(value)


class QuadraticTrackingCost(OwnCost):
    def __init__(
        self, Q: DoubleMatrix, C: DoubleMatrix, Qf: DoubleMatrix, x_f: DoubleMatrix
    ) -> None:
        self.Q = np.asarray(Q, dtype=np.float64)
        self.C = np.asarray(C, dtype=np.float64)
        self.Qf = np.asarray(Qf, dtype=np.float64)
        self.x_f = np.asarray(x_f, dtype=np.float64)

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        return quadratic_tracking_cost(x, u, self.Q, self.C, self.x_f)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        return quadratic_tracking_cost(x, None, self.Qf, None, self.x_f)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        e = np.asarray(x, dtype=np.float64) - self.x_f
        return StageDerivatives(
            self.Q @ e, self.C @ u, self.Q.copy(), self.C.copy(), np.zeros((len(u), len(x)))
        )

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        e = np.asarray(x, dtype=np.float64) - self.x_f
        return TerminalDerivatives(self.Qf @ e, self.Qf.copy())

    def stage_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        e = states - self.x_f
        state_part = np.einsum("ti,ij,tj->t", e, self.Q, e)
        control_part = np.einsum("ti,ij,tj->t", controls, self.C, controls)
        return 0.5 * (state_part + control_part)

    def stage_derivatives_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> StageDerivatives:
        T, n, m = len(steps), states.shape[1], controls.shape[1]
        return StageDerivatives(
            (states - self.x_f) @ self.Q.T,
            controls @ self.C.T,
            np.broadcast_to(self.Q, (T, n, n)),
            np.broadcast_to(self.C, (T, m, m)),
            np.zeros((T, m, n)),
        )


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


def collision_constraint(xi: DoubleMatrix, xj: DoubleMatrix, d_collision: float) -> float:
    """d_collision - d; non-positive when the pair is separated enough."""
    if not d_collision > 0:
        raise ValueError(f"d_collision must be positive, got {d_collision}")
    _, d = _separation(xi, xj)
    return d_collision - d


def control_bound_constraint(u: DoubleMatrix, u_bound: Union[float, DoubleMatrix]) -> DoubleMatrix:
    """|u| - u_bound elementwise."""
    bound = np.asarray(u_bound, dtype=np.float64)
    if np.any(bound <= 0):
        raise ValueError("u_bound must be positive")
    return np.abs(np.asarray(u, dtype=np.float64)) - bound


class _PairDistance(Constraint):
    state_only = True

    def __init__(self, layout: AgentLayout, i: AgentId, j: AgentId) -> None:
        layout.check_agent(i)
        layout.check_agent(j)
        if i == j:
            raise ValueError("A distance constraint needs two distinct agents")
        self.layout = layout
        self.pair = (i, j)
        self.agents = (i, j)
        self.dim = 1

    def _positions(self, x: DoubleMatrix) -> tuple[DoubleMatrix, DoubleMatrix]:
        i, j = self.pair
        return x[self.layout.state_slice(i)], x[self.layout.state_slice(j)]

    def _distance_jacobian(self, x: DoubleMatrix) -> DoubleMatrix:
        """Gradient of the planar distance d(x^i, x^j) w.r.t. the joint state."""
        i, j = self.pair
        delta, d = _separation(*self._positions(x))
        row = np.zeros((1, len(x)))
        if d > _MIN_SEPARATION:
            si = self.layout.state_slice(i).start
            sj = self.layout.state_slice(j).start
            row[0, si : si + 2] = delta / d
            row[0, sj : sj + 2] = -delta / d
        return row

    def _with_controls(
        self, row: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        return row, None if u is None else np.zeros((1, len(u)))

    def _distances(self, states: DoubleMatrix) -> DoubleMatrix:
        i, j = self.pair
        lay = self.layout
        return _separations(states[:, lay.state_slice(i)], states[:, lay.state_slice(j)])[1]

    def _distance_jacobian_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        """(T, 1, n) distance gradients and zero (T, 1, m) control blocks."""
        i, j = self.pair
        si = self.layout.state_slice(i).start
        sj = self.layout.state_slice(j).start
        delta, d = _separations(states[:, si : si + 2], states[:, sj : sj + 2])
        e = np.zeros_like(delta)
        np.divide(delta, d[:, np.newaxis], out=e, where=(d > _MIN_SEPARATION)[:, np.newaxis])
        T = len(states)
        rows = np.zeros((T, 1, states.shape[1]))
        rows[:, 0, si : si + 2] = e
        rows[:, 0, sj : sj + 2] = -e
        return rows, np.zeros((T, 1, controls.shape[1]))


class CollisionConstraint(_PairDistance):
    """d_collision - ||p^i - p^j|| <= 0."""

    def __init__(self, layout: AgentLayout, i: AgentId, j: AgentId, d_collision: float) -> None:
        super().__init__(layout, i, j)
        if not d_collision > 0:
            raise ValueError(f"d_collision must be positive, got {d_collision}")
        self.d_collision = float(d_collision)

    def value(self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]) -> DoubleMatrix:
        return np.array([collision_constraint(*self._positions(x), self.d_collision)])

    def jacobian(
        self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        return self._with_controls(-self._distance_jacobian(x), u)

    def value_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        return (self.d_collision - self._distances(states))[:, np.newaxis]

    def jacobian_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        gx, gu = self._distance_jacobian_batch(states, controls)
        return -gx, gu


class EqualityDistanceConstraint(_PairDistance):
    """||p^i - p^j|| - D = 0, e.g. two agents carrying a rod."""

    equality = True

    def __init__(self, layout: AgentLayout, i: AgentId, j: AgentId, distance: float) -> None:
        super().__init__(layout, i, j)
        if not distance > 0:
            raise ValueError(f"distance must be positive, got {distance}")
        self.distance = float(distance)

    def value(self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]) -> DoubleMatrix:
        _, d = _separation(*self._positions(x))
        return np.array([d - self.distance])

    def jacobian(
        self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        return self._with_controls(self._distance_jacobian(x), u)

    def value_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        return (self._distances(states) - self.distance)[:, np.newaxis]

    def jacobian_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        return self._distance_jacobian_batch(states, controls)


class ControlBoundConstraint(Constraint):
    """Box |u^i| <= b as the smooth row pairs u^i - b <= 0 and -u^i - b <= 0."""

    def __init__(
        self, layout: AgentLayout, i: AgentId, bound: Union[float, Sequence[float]]
    ) -> None:
        layout.check_agent(i)
        mi = layout.control_dims[i]
        self.bound = np.broadcast_to(np.asarray(bound, dtype=np.float64), (mi,)).copy()
        if np.any(self.bound <= 0):
            raise ValueError("u_bound must be positive")
        self.layout = layout
        self.agent = i
        self.agents = (i,)
        self.dim = 2 * mi

    def value(self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]) -> DoubleMatrix:
        ui = np.asarray(u, dtype=np.float64)[self.layout.control_slice(self.agent)]
        return np.concatenate([ui - self.bound, -ui - self.bound])

    def jacobian(
        self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        mi = self.bound.size
        gu = np.zeros((self.dim, len(u) if u is not None else self.layout.m))
        sl = self.layout.control_slice(self.agent)
        gu[:mi, sl] = np.eye(mi)
        gu[mi:, sl] = -np.eye(mi)
        return np.zeros((self.dim, len(x))), gu

    def value_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        ui = controls[:, self.layout.control_slice(self.agent)]
        return np.concatenate([ui - self.bound, -ui - self.bound], axis=1)

    def jacobian_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        gx, gu = self.jacobian(0, states[0], controls[0])
        T = len(steps)
        return np.broadcast_to(gx, (T,) + gx.shape), np.broadcast_to(gu, (T,) + gu.shape)

    def control_box(self) -> Optional[tuple[slice, DoubleMatrix, DoubleMatrix]]:
        return self.layout.control_slice(self.agent), -self.bound, self.bound


# ---------------------------------------------------------------------------
# Scenario schema
# ---------------------------------------------------------------------------


class DynamicsKind(str, Enum):
    UNICYCLE = "unicycle"
    DOUBLE_INTEGRATOR = "double_integrator"


class KernelKind(str, Enum):
    PROXIMITY = "proximity"
    NONE = "none"


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_length(values: list[float], size: int, name: str) -> list[float]:
    if len(values) != size:
        raise ValueError(f"{name} must have {size} entries, got {len(values)}")
    return values


class AgentSpec(_Schema):
    """One agent: dynamics kind, start and goal states and diagonal cost weights."""

    dynamics: DynamicsKind = DynamicsKind.UNICYCLE
    start: list[float]
    goal: list[float]
    Q: list[float] = Field(default_factory=lambda: [1.0, 1.0, 0.01, 0.01])
    C: list[float] = Field(default_factory=lambda: [0.1, 0.1])
    Qf: list[float] = Field(default_factory=lambda: [10.0, 10.0, 0.1, 0.1])

    @field_validator("start", "goal")
    @classmethod
    def _state_length(cls, value: list[float]) -> list[float]:
        return _check_length(value, 4, "state")

    @field_validator("Q", "Qf")
    @classmethod
    def _state_weights(cls, value: list[float]) -> list[float]:
        _check_length(value, 4, "state weights")
        if any(w < 0 for w in value):
            raise ValueError("state weights must be non-negative")
        return value

    @field_validator("C")
    @classmethod
    def _control_weights(cls, value: list[float]) -> list[float]:
        _check_length(value, 2, "control weights")
        if any(w <= 0 for w in value):
            raise ValueError("control weights must be positive")
        return value


class CouplingSpec(_Schema):
    """
    Coefficients as one number per agent or a full N x N matrix.

    A per-agent list c means c^{ij} = c^j under ``uniform_incoming`` and
    c^{ij} = c^i otherwise.
    """

    structure: Optional[PotentialStructure] = None
    coefficients: Optional[Union[list[float], list[list[float]]]] = None
    kernel: KernelKind = KernelKind.NONE
    d_m: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _kernel_threshold(self) -> "CouplingSpec":
        if self.kernel is KernelKind.PROXIMITY and self.d_m is None:
            raise ValueError("the proximity kernel needs d_m")
        return self

    def coefficient_matrix(self, num_agents: int) -> DoubleMatrix:
        if self.coefficients is None:
            return np.ones((num_agents, num_agents))
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.ndim == 1:
            if c.size != num_agents:
                raise ValueError(f"expected {num_agents} coefficients, got {c.size}")
            if self.structure is PotentialStructure.UNIFORM_INCOMING:
                return np.tile(c, (num_agents, 1))
            return np.tile(c[:, np.newaxis], (1, num_agents))
        if c.shape != (num_agents, num_agents):
            raise ValueError(f"coefficient matrix must be {num_agents}x{num_agents}")
        return c


class EqualityLinkSpec(_Schema):
    agents: tuple[int, int]
    distance: float = Field(gt=0)


class ConstraintSpec(_Schema):
    d_collision: Optional[float] = Field(default=None, gt=0)
    u_bound: Optional[Union[float, list[float]]] = None
    equality_links: list[EqualityLinkSpec] = Field(default_factory=list)

    @field_validator("u_bound")
    @classmethod
    def _positive_bound(
        cls, value: Optional[Union[float, list[float]]]
    ) -> Optional[Union[float, list[float]]]:
        if value is None:
            return value
        values = value if isinstance(value, list) else [value]
        if not values or any(b <= 0 for b in values):
            raise ValueError("u_bound must be positive")
        return value


class HorizonSpec(_Schema):
    seconds: float = Field(gt=0)
    dt: float = Field(gt=0)

    @property
    def steps(self) -> int:
        return int(round(self.seconds / self.dt))

    @model_validator(mode="after")
    def _whole_steps(self) -> "HorizonSpec":
        if self.steps < 1 or not math.isclose(self.steps * self.dt, self.seconds, rel_tol=1e-9):
            raise ValueError("seconds must be a positive multiple of dt")
        return self


class ScenarioSpec(_Schema):
    """Complete scenario: agents, coupling, constraints, horizon and solver overrides."""

    name: str = "scenario"
    agents: list[AgentSpec] = Field(min_length=1)
    coupling: CouplingSpec = Field(default_factory=CouplingSpec)
    constraints: ConstraintSpec = Field(default_factory=ConstraintSpec)
    horizon: HorizonSpec
    solver: dict[str, Union[int, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioSpec":
        n = len(self.agents)
        self.coupling.coefficient_matrix(n)
        cons = self.constraints
        if (
            cons.d_collision is not None
            and self.coupling.kernel is KernelKind.PROXIMITY
            and self.coupling.d_m is not None
            and not cons.d_collision < self.coupling.d_m
        ):
            raise ValueError("d_collision must be smaller than d_m")
        if isinstance(cons.u_bound, list) and len(cons.u_bound) != 2:
            raise ValueError("u_bound needs one entry per control channel")
        for link in cons.equality_links:
            i, j = link.agents
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"invalid equality link agents {link.agents}")
        self.solver_options()
        return self

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    def solver_options(self, **overrides: Any) -> SolverOptions:
        return SolverOptions().with_overrides(**{**self.solver, **overrides})

    def with_starts(self, starts: Sequence[Sequence[float]]) -> "ScenarioSpec":
        agents = [
            agent.model_copy(update={"start": [float(v) for v in start]})
            for agent, start in zip(self.agents, starts)
        ]
        return self.model_copy(update={"agents": agents})


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _agent_dynamics(kind: DynamicsKind, dt: float) -> AgentDynamics:
    if kind is DynamicsKind.UNICYCLE:
        return UnicycleDynamics(dt)
    return DoubleIntegratorDynamics(dt)


def build_game(spec: ScenarioSpec) -> Game:
    """Assemble the structured game described by ``spec``."""
    dt = spec.horizon.dt
    dynamics = DynamicsModel([_agent_dynamics(a.dynamics, dt) for a in spec.agents], dt)
    layout = dynamics.layout
    own = [
        QuadraticTrackingCost(np.diag(a.Q), np.diag(a.C), np.diag(a.Qf), np.array(a.goal))
        for a in spec.agents
    ]
    kernels: dict[tuple[int, int], PairKernel] = {}
    if spec.coupling.kernel is KernelKind.PROXIMITY:
        assert spec.coupling.d_m is not None
        kernel = ProximityKernel(spec.coupling.d_m)
        for i in layout.agents:
            for j in layout.agents:
                if i < j:
                    kernels[(i, j)] = kernel
    costs = StructuredCost.symmetric(
        layout, own, kernels, spec.coupling.coefficient_matrix(layout.num_agents)
    )

    cons = spec.constraints
    stage: list[Constraint] = []
    terminal: list[Constraint] = []
    if cons.d_collision is not None:
        for i in layout.agents:
            for j in layout.agents:
                if i < j:
                    collision = CollisionConstraint(layout, i, j, cons.d_collision)
                    stage.append(collision)
                    terminal.append(collision)
    if cons.u_bound is not None:
        stage.extend(ControlBoundConstraint(layout, i, cons.u_bound) for i in layout.agents)
    for link in cons.equality_links:
        rod = EqualityDistanceConstraint(layout, link.agents[0], link.agents[1], link.distance)
        stage.append(rod)
        terminal.append(rod)

    game = Game(
        dynamics=dynamics,
        costs=costs,
        constraints=ConstraintSet(stage, terminal),
        x0=np.concatenate([a.start for a in spec.agents]),
        horizon=spec.horizon.steps,
        goals=np.concatenate([a.goal for a in spec.agents]),
    )
    logger.debug(
        "scenario_built",
        scenario=spec.name,
        agents=layout.num_agents,
        horizon=game.horizon,
        stage_constraints=len(stage),
    )
    return game


def certify_scenario(
    spec: ScenarioSpec, game: Optional[Game] = None, seed: int = 0
) -> PotentialCertificate:
    """Certify under the scenario's structure tag, or detect the structure when untagged."""
    game = build_game(spec) if game is None else game
    return certify_game(game, spec.coupling.structure, seed=seed)


def _swap_agents(
    count: int,
    jitter: float,
    Q: Sequence[float],
    C: Sequence[float],
    Qf: Sequence[float],
) -> list[AgentSpec]:
    agents = []
    for start, goal in SWAP_CORNERS[:count]:
        theta = math.atan2(goal[1] - start[1], goal[0] - start[0])
        # offset to the right of the direction of travel
        p = start[0] + jitter * math.sin(theta)
        q = start[1] - jitter * math.cos(theta)
        agents.append(
            AgentSpec(
                start=[p, q, theta, 0.0],
                goal=[goal[0], goal[1], theta, 0.0],
                Q=list(Q),
                C=list(C),
                Qf=list(Qf),
            )
        )
    return agents


_DEFAULT_Q = (1.0, 1.0, 0.01, 0.01)
_DEFAULT_C = (0.1, 0.1)
_DEFAULT_QF = (10.0, 10.0, 0.1, 0.1)


def four_agent_swap_spec(
    jitter: Optional[float] = None,
    seconds: float = 5.0,
    dt: float = 0.1,
    d_collision: float = 0.3,
    u_bound: float = 3.0,
    Q: Sequence[float] = _DEFAULT_Q,
    C: Sequence[float] = _DEFAULT_C,
    Qf: Sequence[float] = _DEFAULT_QF,
) -> ScenarioSpec:
    """Four unicycles exchanging diagonal corners of a 3 m square."""
    jitter = settings.TIE_BREAK_JITTER if jitter is None else jitter
    return ScenarioSpec(
        name="four_agent_swap",
        agents=_swap_agents(4, jitter, Q, C, Qf),
        coupling=CouplingSpec(
            structure=PotentialStructure.UNIFORM_OUTGOING, coefficients=[1.0] * 4
        ),
        constraints=ConstraintSpec(d_collision=d_collision, u_bound=u_bound),
        horizon=HorizonSpec(seconds=seconds, dt=dt),
    )


def three_agent_asymmetric_spec(
    c: Sequence[float] = (10.0, 1.0, 1.0),
    jitter: Optional[float] = None,
    seconds: float = 5.0,
    dt: float = 0.1,
    d_m: float = 2.0,
    Q: Sequence[float] = _DEFAULT_Q,
    C: Sequence[float] = _DEFAULT_C,
    Qf: Sequence[float] = _DEFAULT_QF,
) -> ScenarioSpec:
    """Three unicycles crossing the square with proximity costs and c^{ij} = c^i."""
    if len(c) != 3 or any(value <= 0 for value in c):
        raise ValueError("c must hold three positive coefficients")
    jitter = settings.TIE_BREAK_JITTER if jitter is None else jitter
    return ScenarioSpec(
        name="three_agent_asymmetric",
        agents=_swap_agents(3, jitter, Q, C, Qf),
        coupling=CouplingSpec(
            structure=PotentialStructure.UNIFORM_OUTGOING,
            coefficients=[float(v) for v in c],
            kernel=KernelKind.PROXIMITY,
            d_m=d_m,
        ),
        horizon=HorizonSpec(seconds=seconds, dt=dt),
    )


def double_integrator_lq_spec(
    num_agents: int = 2,
    seconds: float = 2.0,
    dt: float = 0.1,
) -> ScenarioSpec:
    """Unconstrained double integrators driving to the swap corners; an LQ game."""
    if not 1 <= num_agents <= len(SWAP_CORNERS):
        raise ValueError(f"num_agents must be between 1 and {len(SWAP_CORNERS)}")
    agents = [
        AgentSpec(
            dynamics=DynamicsKind.DOUBLE_INTEGRATOR,
            start=[start[0], start[1], 0.0, 0.0],
            goal=[goal[0], goal[1], 0.0, 0.0],
            Q=[1.0, 1.0, 0.1, 0.1],
            C=[0.1, 0.1],
            Qf=[10.0, 10.0, 1.0, 1.0],
        )
        for start, goal in SWAP_CORNERS[:num_agents]
    ]
    return ScenarioSpec(
        name="double_integrator_lq",
        agents=agents,
        coupling=CouplingSpec(
            structure=PotentialStructure.UNIFORM_OUTGOING, coefficients=[1.0] * num_agents
        ),
        horizon=HorizonSpec(seconds=seconds, dt=dt),
    )


def build_four_agent_swap(**kwargs: Any) -> Game:
    return build_game(four_agent_swap_spec(**kwargs))


def build_three_agent_asymmetric(c: Sequence[float] = (10.0, 1.0, 1.0), **kwargs: Any) -> Game:
    return build_game(three_agent_asymmetric_spec(c, **kwargs))


def lq_game_from_spec(spec: ScenarioSpec) -> LqGame:
    """
    The LQ game of an unconstrained, uncoupled double-integrator scenario in
    the shifted state z = x - x_goal.

    The shift is exact because goal velocities are zero, so A x_goal = x_goal.
    The constant k = 0 state cost is dropped.
    """
    if any(a.dynamics is not DynamicsKind.DOUBLE_INTEGRATOR for a in spec.agents):
        raise WrongStructureError("LQ form needs double-integrator agents")
    if spec.coupling.kernel is not KernelKind.NONE:
        raise WrongStructureError("LQ form needs uncoupled agents")
    cons = spec.constraints
    if cons.d_collision is not None or cons.u_bound is not None or cons.equality_links:
        raise WrongStructureError("LQ form needs an unconstrained scenario")
    if any(a.goal[2] != 0.0 or a.goal[3] != 0.0 for a in spec.agents):
        raise WrongStructureError("LQ form needs zero goal velocities")

    game = build_game(spec)
    lay = game.layout
    T = game.horizon
    dt = spec.horizon.dt
    A = np.zeros((lay.n, lay.n))
    B = np.zeros((lay.n, lay.m))
    Q = np.zeros((lay.num_agents, T + 1, lay.n, lay.n))
    R = {}
    for i, agent in enumerate(spec.agents):
        si, ci = lay.state_slice(i), lay.control_slice(i)
        dyn = DoubleIntegratorDynamics(dt)
        A[si, si] = dyn.A
        B[si, ci] = dyn.B
        Q[i, 1:T, si, si] = np.diag(agent.Q)
        Q[i, T, si, si] = np.diag(agent.Qf)
        R[(i, i)] = np.diag(agent.C)
    assert game.goals is not None
    return LqGame.from_blocks(
        A, B, list(Q), R, lay.control_dims, game.x0 - game.goals, T, lay.state_dims
    )


def lq_reference_trajectory(spec: ScenarioSpec) -> Trajectory:
    """Exact open-loop Nash trajectory of an LQ scenario, in the original coordinates."""
    lq = lq_game_from_spec(spec)
    goals = np.concatenate([a.goal for a in spec.agents])
    shifted = open_loop_nash_exact(lq)
    return Trajectory(shifted.states + goals, shifted.controls, spec.horizon.dt)


# ---------------------------------------------------------------------------
# Two-agent LQ game with a dyadic potential
# ---------------------------------------------------------------------------

LQ_DYADIC_A = np.array(
    [[0.0, 1.0, 0.0, 0.0], [-1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, -1.0]]
)
LQ_DYADIC_B = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
LQ_DYADIC_Q1 = np.array(
    [[1.0, -1.0, 2.0, 0.0], [-1.0, 5.0, -1.0, 1.0], [2.0, -1.0, 6.0, -2.0], [0.0, 1.0, -2.0, 4.0]]
)
LQ_DYADIC_Q2 = np.array(
    [[1.0, -1.0, 2.0, 0.0], [-1.0, 4.0, -1.0, 1.0], [2.0, -1.0, 6.0, 0.0], [0.0, 1.0, 0.0, 2.0]]
)
LQ_DYADIC_P = np.array(
    [[1.0, -1.0, 2.0, 0.0], [-1.0, 5.0, -1.0, 1.0], [2.0, -1.0, 6.0, 0.0], [0.0, 1.0, 0.0, 2.0]]
)
LQ_DYADIC_R = np.diag([3.0, 2.0])
LQ_DYADIC_X0 = np.array([3.0, 2.0, 4.0, 5.0])
LQ_DYADIC_HORIZON = 20


def lq_dyadic_game(horizon: int = LQ_DYADIC_HORIZON, x0: Optional[DoubleMatrix] = None) -> LqGame:
    """Two agents, two states each; agent i's rows of Q^i agree with the potential."""
    return LqGame.from_blocks(
        LQ_DYADIC_A,
        LQ_DYADIC_B,
        [LQ_DYADIC_Q1, LQ_DYADIC_Q2],
        {(0, 0): [[3.0]], (1, 1): [[2.0]], (0, 1): [[0.0]], (1, 0): [[0.0]]},
        (1, 1),
        LQ_DYADIC_X0 if x0 is None else x0,
        horizon,
        state_dims=(2, 2),
    )


def lq_dyadic_potential(horizon: int = LQ_DYADIC_HORIZON) -> LqPotential:
    return LqPotential.from_blocks(LQ_DYADIC_P, LQ_DYADIC_R, horizon)

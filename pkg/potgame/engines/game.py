"""
Game Core - domain types shared by every engine.

A game is the tuple (dynamics, structured costs, constraints, x0, T). Joint
vectors are stored as one contiguous array; ``AgentLayout`` holds the block
offsets of each agent inside the joint state and joint control.

Stage cost of agent i at step k:

    L^i_k(x, u^i) = L^{ii}_k(x^i, u^i) + sum_{j != i} c^{ij}_k L^{ij}_k(x^i, x^j)

Terminal cost has the same form without controls. Constraints are stored as
g(x_k, u_k) <= 0 (equality rows h = 0 are flagged per constraint).
"""

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterator, Mapping, Optional, Protocol, Sequence

import numpy as np
import numpy.typing as npt

from potgame.errors import DimensionMismatchError, DivergenceError
from potgame.utils.finite_diff import central_gradient, central_hessian, central_jacobian

DoubleMatrix = npt.NDArray[np.float64]
StepArray = npt.NDArray[np.int_]
AgentId = int

# Outer step of the nested finite-difference Hessian fallback
_HESSIAN_FD_STEP = 1e-4


def _as_vector(value: object) -> DoubleMatrix:
    return np.atleast_1d(np.asarray(value, dtype=np.float64))


def _frozen(array: DoubleMatrix) -> DoubleMatrix:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


def _at(matrix: DoubleMatrix, k: int) -> DoubleMatrix:
    """Select step ``k`` from a per-step stack, clamping to the last entry."""
    if matrix.ndim == 3:
        return matrix[min(k, matrix.shape[0] - 1)]
    return matrix


def _at_steps(matrix: DoubleMatrix, steps: StepArray) -> DoubleMatrix:
    """``_at`` for every entry of ``steps``, stacked on a leading axis."""
    if matrix.ndim == 3:
        return matrix[np.minimum(steps, matrix.shape[0] - 1)]
    return np.broadcast_to(matrix, (len(steps),) + matrix.shape)


# ---------------------------------------------------------------------------
# Layout and trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentLayout:
    """Block offsets of each agent inside the joint state and control vectors."""

    state_dims: tuple[int, ...]
    control_dims: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_dims", tuple(int(d) for d in self.state_dims))
        object.__setattr__(self, "control_dims", tuple(int(d) for d in self.control_dims))
        if len(self.state_dims) < 1:
            raise DimensionMismatchError("A game needs at least one agent")
        if len(self.state_dims) != len(self.control_dims):
            raise DimensionMismatchError(
                "State and control blocks disagree on the number of agents",
                state_blocks=len(self.state_dims),
                control_blocks=len(self.control_dims),
            )
        if any(d < 1 for d in self.state_dims) or any(d < 0 for d in self.control_dims):
            raise DimensionMismatchError("Block dimensions must be positive")

    @property
    def num_agents(self) -> int:
        return len(self.state_dims)

    @property
    def n(self) -> int:
        return sum(self.state_dims)

    @property
    def m(self) -> int:
        return sum(self.control_dims)

    @property
    def agents(self) -> tuple[AgentId, ...]:
        return tuple(range(self.num_agents))

    def check_agent(self, i: AgentId) -> None:
        if not 0 <= i < self.num_agents:
            raise DimensionMismatchError(
                "Agent index out of range", agent=i, num_agents=self.num_agents
            )

    def state_slice(self, i: AgentId) -> slice:
        self.check_agent(i)
        start = sum(self.state_dims[:i])
        return slice(start, start + self.state_dims[i])

    def control_slice(self, i: AgentId) -> slice:
        self.check_agent(i)
        start = sum(self.control_dims[:i])
        return slice(start, start + self.control_dims[i])

    def offending_state_block(self, size: int) -> AgentId:
        return _offending_block(self.state_dims, size)

    def offending_control_block(self, size: int) -> AgentId:
        return _offending_block(self.control_dims, size)


def _offending_block(dims: tuple[int, ...], size: int) -> AgentId:
    end = 0
    for i, dim in enumerate(dims):
        end += dim
        if end > size:
            return i
    return len(dims) - 1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Joint states x_0..x_T and joint controls u_0..u_{T-1}; arrays are read-only."""

    states: DoubleMatrix
    controls: DoubleMatrix
    dt: float = 1.0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        controls = np.asarray(self.controls, dtype=np.float64)
        if states.ndim != 2 or controls.ndim != 2:
            raise DimensionMismatchError(
                "Trajectory arrays must be 2-D", states=states.shape, controls=controls.shape
            )
        if states.shape[0] != controls.shape[0] + 1:
            raise DimensionMismatchError(
                "Expected T+1 states for T controls",
                states=states.shape[0],
                controls=controls.shape[0],
            )
        if controls.shape[0] < 1:
            raise DimensionMismatchError("Horizon must be at least one step")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "controls", _frozen(controls))

    @property
    def horizon(self) -> int:
        return int(self.controls.shape[0])

    @property
    def times(self) -> DoubleMatrix:
        return np.arange(self.horizon + 1) * self.dt

    def agent_states(self, layout: AgentLayout, i: AgentId) -> DoubleMatrix:
        return self.states[:, layout.state_slice(i)]

    def agent_controls(self, layout: AgentLayout, i: AgentId) -> DoubleMatrix:
        return self.controls[:, layout.control_slice(i)]

    def distance(self, other: "Trajectory") -> float:
        """Max absolute entry-wise state difference."""
        return float(np.max(np.abs(self.states - other.states)))


# ---------------------------------------------------------------------------
# Objective protocol (shared by the potential, LQ and solver engines)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StageDerivatives:
    """
    Gradient and Gauss-Newton Hessian blocks of a stage cost.

    The batch evaluators return the same record with a leading step axis on
    every array.
    """

    lx: DoubleMatrix
    lu: DoubleMatrix
    lxx: DoubleMatrix
    luu: DoubleMatrix
    lux: DoubleMatrix


@dataclass(frozen=True, eq=False)
class TerminalDerivatives:
    lx: DoubleMatrix
    lxx: DoubleMatrix


class TrajectoryObjective(Protocol):
    """Stage-additive objective over a trajectory, as consumed by the solvers."""

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float: ...

    def terminal(self, k: int, x: DoubleMatrix) -> float: ...

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives: ...

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives: ...


_STAGE_FIELDS = ("lx", "lu", "lxx", "luu", "lux")


def stack_stage_derivatives(items: Sequence[StageDerivatives]) -> StageDerivatives:
    arrays = (np.stack([getattr(d, name) for d in items]) for name in _STAGE_FIELDS)
    return StageDerivatives(*arrays)


def stage_cost_batch(
    objective: TrajectoryObjective, states: DoubleMatrix, controls: DoubleMatrix
) -> DoubleMatrix:
    """
    Stage costs at k = 0..T-1 for the rows of ``states`` and ``controls``.

    Objectives may provide ``stage_batch(states, controls)``; otherwise the
    stages are evaluated one at a time.
    """
    batch = getattr(objective, "stage_batch", None)
    if batch is not None:
        return np.asarray(batch(states, controls), dtype=np.float64)
    return np.array([objective.stage(k, states[k], controls[k]) for k in range(len(controls))])


def stage_derivatives_batch(
    objective: TrajectoryObjective, states: DoubleMatrix, controls: DoubleMatrix
) -> StageDerivatives:
    """Stacked stage derivatives; uses ``stage_derivatives_batch`` when provided."""
    batch = getattr(objective, "stage_derivatives_batch", None)
    if batch is not None:
        return batch(states, controls)
    return stack_stage_derivatives(
        [objective.stage_derivatives(k, states[k], controls[k]) for k in range(len(controls))]
    )


def objective_value(objective: TrajectoryObjective, traj: Trajectory) -> float:
    total = np.sum(stage_cost_batch(objective, traj.states[:-1], traj.controls))
    return float(total + objective.terminal(traj.horizon, traj.states[-1]))


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


class AgentDynamics(ABC):
    """Step map x^i_{k+1} = f^i(x^i_k, u^i_k) of a single agent."""

    state_dim: int
    control_dim: int

    @abstractmethod
    def step(self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0) -> DoubleMatrix:
        raise NotImplementedError

    def jacobians(
        self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        """(df/dx, df/du); central differences unless a subclass knows better."""
        x = _as_vector(x)
        u = _as_vector(u)
        fx = central_jacobian(lambda z: self.step(z, u, k), x)
        fu = central_jacobian(lambda v: self.step(x, v, k), u)
        return fx, fu

    def jacobians_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        """Jacobians at every row, stacked as (T, n, n) and (T, n, m)."""
        pairs = [self.jacobians(states[t], controls[t], int(k)) for t, k in enumerate(steps)]
        return np.stack([fx for fx, _ in pairs]), np.stack([fu for _, fu in pairs])


class LinearDynamics(AgentDynamics):
    """x^+ = A_k x + B_k u with constant or per-step matrices."""

    def __init__(self, A: DoubleMatrix, B: DoubleMatrix) -> None:
        self.A = np.asarray(A, dtype=np.float64)
        self.B = np.asarray(B, dtype=np.float64)
        if self.B.ndim == self.A.ndim - 1:
            self.B = self.B[..., np.newaxis]
        self.state_dim = int(self.A.shape[-1])
        self.control_dim = int(self.B.shape[-1])
        if self.A.shape[-2] != self.state_dim or self.B.shape[-2] != self.state_dim:
            raise DimensionMismatchError(
                "Inconsistent linear dynamics", A=self.A.shape, B=self.B.shape
            )

    def step(self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0) -> DoubleMatrix:
        return _at(self.A, k) @ _as_vector(x) + _at(self.B, k) @ _as_vector(u)

    def jacobians(
        self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        return _at(self.A, k).copy(), _at(self.B, k).copy()

    def jacobians_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        return _at_steps(self.A, steps), _at_steps(self.B, steps)


class DynamicsModel:
    """Block-separable joint dynamics assembled from per-agent step maps."""

    def __init__(self, agents: Sequence[AgentDynamics], dt: float = 1.0) -> None:
        if not agents:
            raise DimensionMismatchError("Dynamics need at least one agent")
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.agents: tuple[AgentDynamics, ...] = tuple(agents)
        self.dt = float(dt)
        self.layout = AgentLayout(
            tuple(a.state_dim for a in self.agents), tuple(a.control_dim for a in self.agents)
        )
        self._blocks = tuple(
            (agent, self.layout.state_slice(i), self.layout.control_slice(i))
            for i, agent in enumerate(self.agents)
        )

    def step(self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0) -> DoubleMatrix:
        out = np.empty(self.layout.n)
        for agent, xs, us in self._blocks:
            out[xs] = agent.step(x[xs], u[us], k)
        return out

    def jacobians(
        self, x: DoubleMatrix, u: DoubleMatrix, k: int = 0
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        A = np.zeros((self.layout.n, self.layout.n))
        B = np.zeros((self.layout.n, self.layout.m))
        for agent, xs, us in self._blocks:
            A[xs, xs], B[xs, us] = agent.jacobians(x[xs], u[us], k)
        return A, B

    def jacobians_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        """Joint Jacobians at k = 0..T-1 for the rows of ``states`` and ``controls``."""
        T = len(controls)
        steps = np.arange(T)
        A = np.zeros((T, self.layout.n, self.layout.n))
        B = np.zeros((T, self.layout.n, self.layout.m))
        for agent, xs, us in self._blocks:
            A[:, xs, xs], B[:, xs, us] = agent.jacobians_batch(
                steps, states[:, xs], controls[:, us]
            )
        return A, B


# ---------------------------------------------------------------------------
# Structured costs
# ---------------------------------------------------------------------------


class OwnCost(ABC):
    """Own-cost term L^{ii}_k(x^i, u^i) and its terminal counterpart L^{ii}_T(x^i)."""

    @abstractmethod
    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        raise NotImplementedError

    @abstractmethod
    def terminal(self, k: int, x: DoubleMatrix) -> float:
        raise NotImplementedError

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        x, u = _as_vector(x), _as_vector(u)
        nx = x.size
        z = np.concatenate([x, u])

        def value(v: DoubleMatrix) -> float:
            return self.stage(k, v[:nx], v[nx:])

        grad = central_gradient(value, z)
        hess = central_hessian(lambda v: central_gradient(value, v), z, _HESSIAN_FD_STEP)
        return StageDerivatives(
            lx=grad[:nx], lu=grad[nx:], lxx=hess[:nx, :nx], luu=hess[nx:, nx:], lux=hess[nx:, :nx]
        )

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        x = _as_vector(x)

        def value(v: DoubleMatrix) -> float:
            return self.terminal(k, v)

        return TerminalDerivatives(
            lx=central_gradient(value, x),
            lxx=central_hessian(lambda v: central_gradient(value, v), x, _HESSIAN_FD_STEP),
        )

    def stage_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        return np.array([self.stage(int(k), states[t], controls[t]) for t, k in enumerate(steps)])

    def stage_derivatives_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> StageDerivatives:
        return stack_stage_derivatives(
            [self.stage_derivatives(int(k), states[t], controls[t]) for t, k in enumerate(steps)]
        )


class QuadraticOwnCost(OwnCost):
    """
    Stage cost 1/2 x'Q_k x + 1/2 u'R_k u, terminal cost 1/2 x'Qt_T x.

    Each matrix is either constant or a per-step stack indexed by k (clamped).
    """

    def __init__(
        self,
        Q: DoubleMatrix,
        R: DoubleMatrix,
        Q_terminal: Optional[DoubleMatrix] = None,
    ) -> None:
        self.Q = np.asarray(Q, dtype=np.float64)
        self.R = np.asarray(R, dtype=np.float64)
        self.Q_terminal = self.Q if Q_terminal is None else np.asarray(Q_terminal, np.float64)

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        return float(0.5 * x @ _at(self.Q, k) @ x + 0.5 * u @ _at(self.R, k) @ u)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        return float(0.5 * x @ _at(self.Q_terminal, k) @ x)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        Q = _at(self.Q, k)
        R = _at(self.R, k)
        Qs = 0.5 * (Q + Q.T)
        Rs = 0.5 * (R + R.T)
        return StageDerivatives(Qs @ x, Rs @ u, Qs, Rs, np.zeros((u.size, x.size)))

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        Q = _at(self.Q_terminal, k)
        Qs = 0.5 * (Q + Q.T)
        return TerminalDerivatives(Qs @ x, Qs)

    def stage_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        Q, R = _at_steps(self.Q, steps), _at_steps(self.R, steps)
        return 0.5 * (
            np.einsum("ti,tij,tj->t", states, Q, states)
            + np.einsum("ti,tij,tj->t", controls, R, controls)
        )

    def stage_derivatives_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> StageDerivatives:
        Q, R = _at_steps(self.Q, steps), _at_steps(self.R, steps)
        Qs = 0.5 * (Q + Q.transpose(0, 2, 1))
        Rs = 0.5 * (R + R.transpose(0, 2, 1))
        return StageDerivatives(
            np.einsum("tij,tj->ti", Qs, states),
            np.einsum("tij,tj->ti", Rs, controls),
            Qs,
            Rs,
            np.zeros((len(steps), controls.shape[1], states.shape[1])),
        )


class PairKernel(ABC):
    """Inter-agent kernel L^{ij}_k(x^i, x^j); states only, no controls."""

    @abstractmethod
    def value(self, k: int, a: DoubleMatrix, b: DoubleMatrix) -> float:
        raise NotImplementedError

    def gradient(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        a, b = _as_vector(a), _as_vector(b)
        grad = central_gradient(lambda z: self.value(k, z[: a.size], z[a.size :]), np.r_[a, b])
        return grad[: a.size], grad[a.size :]

    def hessian(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        """(d2/da2, d2/da db, d2/db2)."""
        a, b = _as_vector(a), _as_vector(b)
        na = a.size

        def grad(z: DoubleMatrix) -> DoubleMatrix:
            return np.concatenate(self.gradient(k, z[:na], z[na:]))

        hess = central_hessian(grad, np.r_[a, b], _HESSIAN_FD_STEP)
        return hess[:na, :na], hess[:na, na:], hess[na:, na:]

    # Batch forms take (T,) steps and (T, n_a), (T, n_b) state rows.

    def value_batch(self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix) -> DoubleMatrix:
        return np.array([self.value(int(k), a[t], b[t]) for t, k in enumerate(steps)])

    def gradient_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        rows = [self.gradient(int(k), a[t], b[t]) for t, k in enumerate(steps)]
        return np.stack([ga for ga, _ in rows]), np.stack([gb for _, gb in rows])

    def hessian_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        rows = [self.hessian(int(k), a[t], b[t]) for t, k in enumerate(steps)]
        haa, hab, hbb = (np.stack(blocks) for blocks in zip(*rows))
        return haa, hab, hbb


class SwappedKernel(PairKernel):
    """L^{ji}(b, a) := L^{ij}(a, b); the mirror image required for symmetric games."""

    def __init__(self, base: PairKernel) -> None:
        self.base = base

    def value(self, k: int, a: DoubleMatrix, b: DoubleMatrix) -> float:
        return self.base.value(k, b, a)

    def gradient(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        gb, ga = self.base.gradient(k, b, a)
        return ga, gb

    def hessian(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        hbb, hba, haa = self.base.hessian(k, b, a)
        return haa, hba.T, hbb

    def value_batch(self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix) -> DoubleMatrix:
        return self.base.value_batch(steps, b, a)

    def gradient_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        gb, ga = self.base.gradient_batch(steps, b, a)
        return ga, gb

    def hessian_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        hbb, hba, haa = self.base.hessian_batch(steps, b, a)
        return haa, hba.transpose(0, 2, 1), hbb


class QuadraticPairKernel(PairKernel):
    """1/2 a'Qaa a + a'Qab b + 1/2 b'Qbb b with constant or per-step blocks."""

    def __init__(self, Qaa: DoubleMatrix, Qab: DoubleMatrix, Qbb: DoubleMatrix) -> None:
        self.Qaa = np.asarray(Qaa, dtype=np.float64)
        self.Qab = np.asarray(Qab, dtype=np.float64)
        self.Qbb = np.asarray(Qbb, dtype=np.float64)

    def value(self, k: int, a: DoubleMatrix, b: DoubleMatrix) -> float:
        return float(
            0.5 * a @ _at(self.Qaa, k) @ a
            + a @ _at(self.Qab, k) @ b
            + 0.5 * b @ _at(self.Qbb, k) @ b
        )

    def gradient(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        Qaa, Qab, Qbb = _at(self.Qaa, k), _at(self.Qab, k), _at(self.Qbb, k)
        ga = 0.5 * (Qaa + Qaa.T) @ a + Qab @ b
        gb = 0.5 * (Qbb + Qbb.T) @ b + Qab.T @ a
        return ga, gb

    def hessian(
        self, k: int, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        Qaa, Qab, Qbb = _at(self.Qaa, k), _at(self.Qab, k), _at(self.Qbb, k)
        return 0.5 * (Qaa + Qaa.T), Qab.copy(), 0.5 * (Qbb + Qbb.T)

    def _blocks_at(self, steps: StepArray) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        Qaa, Qbb = _at_steps(self.Qaa, steps), _at_steps(self.Qbb, steps)
        sym_aa = 0.5 * (Qaa + Qaa.transpose(0, 2, 1))
        sym_bb = 0.5 * (Qbb + Qbb.transpose(0, 2, 1))
        return sym_aa, _at_steps(self.Qab, steps), sym_bb

    def value_batch(self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix) -> DoubleMatrix:
        Qaa, Qab, Qbb = self._blocks_at(steps)
        return (
            0.5 * np.einsum("ti,tij,tj->t", a, Qaa, a)
            + np.einsum("ti,tij,tj->t", a, Qab, b)
            + 0.5 * np.einsum("ti,tij,tj->t", b, Qbb, b)
        )

    def gradient_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        Qaa, Qab, Qbb = self._blocks_at(steps)
        ga = np.einsum("tij,tj->ti", Qaa, a) + np.einsum("tij,tj->ti", Qab, b)
        gb = np.einsum("tij,tj->ti", Qbb, b) + np.einsum("tji,tj->ti", Qab, a)
        return ga, gb

    def hessian_batch(
        self, steps: StepArray, a: DoubleMatrix, b: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix, DoubleMatrix]:
        Qaa, Qab, Qbb = self._blocks_at(steps)
        return Qaa, np.array(Qab), Qbb


def _normalize_coefficients(coefficients: object, num_agents: int) -> DoubleMatrix:
    c = np.asarray(coefficients, dtype=np.float64)
    if c.ndim == 2:
        c = c[:, :, np.newaxis]
    if c.ndim != 3 or c.shape[:2] != (num_agents, num_agents) or c.shape[2] < 1:
        raise DimensionMismatchError(
            "Coefficients must have shape (N, N) or (N, N, T+1)",
            shape=c.shape,
            num_agents=num_agents,
        )
    c = c.copy()
    for i in range(num_agents):
        c[i, i, :] = 1.0
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise ValueError("Coupling coefficients c^{ij}_k must be finite and strictly positive")
    return c


@dataclass(frozen=True, eq=False)
class StructuredCost:
    """
    Per-agent own costs, ordered-pair kernels and coefficients c^{ij}_k.

    Coefficients are stored as an (N, N, K) array; step k reads index
    min(k + time_offset, K - 1), so K = 1 means constant in time.
    """

    layout: AgentLayout
    own: tuple[OwnCost, ...]
    kernels: Mapping[tuple[int, int], PairKernel] = field(default_factory=dict)
    coefficients: DoubleMatrix = field(default_factory=lambda: np.ones((1, 1, 1)))
    time_offset: int = 0

    def __post_init__(self) -> None:
        n_agents = self.layout.num_agents
        if len(self.own) != n_agents:
            raise DimensionMismatchError(
                "One own cost per agent is required", agents=n_agents, own_costs=len(self.own)
            )
        for i, j in self.kernels:
            if i == j or not (0 <= i < n_agents and 0 <= j < n_agents):
                raise DimensionMismatchError("Invalid kernel pair", pair=(i, j))
        object.__setattr__(self, "own", tuple(self.own))
        object.__setattr__(self, "kernels", MappingProxyType(dict(self.kernels)))
        c = _normalize_coefficients(self.coefficients, n_agents)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def symmetric(
        cls,
        layout: AgentLayout,
        own: Sequence[OwnCost],
        kernels: Mapping[tuple[int, int], PairKernel],
        coefficients: object,
    ) -> "StructuredCost":
        """Build from kernels given for i < j; (j, i) is filled with the mirrored kernel."""
        full: dict[tuple[int, int], PairKernel] = {}
        for (i, j), kernel in kernels.items():
            a, b = (i, j) if i < j else (j, i)
            base = kernel if i < j else SwappedKernel(kernel)
            full[(a, b)] = base
            full[(b, a)] = SwappedKernel(base)
        return cls(layout, tuple(own), full, np.asarray(coefficients, dtype=np.float64))

    @property
    def num_agents(self) -> int:
        return self.layout.num_agents

    def shifted(self, offset: int) -> "StructuredCost":
        """The same costs seen from a window starting ``offset`` steps later."""
        return dataclasses.replace(
            self,
            kernels=dict(self.kernels),
            coefficients=np.array(self.coefficients),
            time_offset=self.time_offset + offset,
        )

    def absolute_step(self, k: int) -> int:
        return k + self.time_offset

    def coefficient_index(self, k: int) -> int:
        return min(k + self.time_offset, self.coefficients.shape[2] - 1)

    def coefficient_indices(self, steps: StepArray) -> StepArray:
        return np.minimum(steps + self.time_offset, self.coefficients.shape[2] - 1)

    def coefficient(self, i: AgentId, j: AgentId, k: int) -> float:
        return float(self.coefficients[i, j, self.coefficient_index(k)])

    def kernel(self, i: AgentId, j: AgentId) -> Optional[PairKernel]:
        return self.kernels.get((i, j))

    def pair_kernel(self, i: AgentId, j: AgentId) -> Optional[PairKernel]:
        """Kernel for (i, j), falling back to the mirror of (j, i)."""
        kernel = self.kernels.get((i, j))
        if kernel is None and (j, i) in self.kernels:
            kernel = SwappedKernel(self.kernels[(j, i)])
        return kernel

    def pairs(self) -> Iterator[tuple[AgentId, AgentId]]:
        """Unordered pairs i < j with at least one kernel."""
        seen = sorted({(min(i, j), max(i, j)) for i, j in self.kernels})
        return iter(seen)

    # -- agent-level evaluation --------------------------------------------

    def agent_stage(self, i: AgentId, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        lay = self.layout
        ka = self.absolute_step(k)
        xi = x[lay.state_slice(i)]
        total = self.own[i].stage(ka, xi, u[lay.control_slice(i)])
        for j in lay.agents:
            kernel = self.kernel(i, j)
            if kernel is not None:
                total += self.coefficient(i, j, k) * kernel.value(ka, xi, x[lay.state_slice(j)])
        return float(total)

    def agent_terminal(self, i: AgentId, k: int, x: DoubleMatrix) -> float:
        lay = self.layout
        ka = self.absolute_step(k)
        xi = x[lay.state_slice(i)]
        total = self.own[i].terminal(ka, xi)
        for j in lay.agents:
            kernel = self.kernel(i, j)
            if kernel is not None:
                total += self.coefficient(i, j, k) * kernel.value(ka, xi, x[lay.state_slice(j)])
        return float(total)

    def agent_stage_gradient(
        self, i: AgentId, k: int, x: DoubleMatrix, u: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        """Gradient of L^i_k w.r.t. the joint state and joint control."""
        lay = self.layout
        ka = self.absolute_step(k)
        si, ci = lay.state_slice(i), lay.control_slice(i)
        gx = np.zeros(lay.n)
        gu = np.zeros(lay.m)
        own = self.own[i].stage_derivatives(ka, x[si], u[ci])
        gx[si] += own.lx
        gu[ci] += own.lu
        self._add_kernel_gradients(i, k, x, gx)
        return gx, gu

    def agent_terminal_gradient(self, i: AgentId, k: int, x: DoubleMatrix) -> DoubleMatrix:
        lay = self.layout
        si = lay.state_slice(i)
        gx = np.zeros(lay.n)
        gx[si] += self.own[i].terminal_derivatives(self.absolute_step(k), x[si]).lx
        self._add_kernel_gradients(i, k, x, gx)
        return gx

    def _add_kernel_gradients(self, i: AgentId, k: int, x: DoubleMatrix, gx: DoubleMatrix) -> None:
        lay = self.layout
        ka = self.absolute_step(k)
        si = lay.state_slice(i)
        for j in lay.agents:
            kernel = self.kernel(i, j)
            if kernel is None:
                continue
            sj = lay.state_slice(j)
            ga, gb = kernel.gradient(ka, x[si], x[sj])
            c = self.coefficient(i, j, k)
            gx[si] += c * ga
            gx[sj] += c * gb

    def agent_block_derivatives(
        self, i: AgentId, k: int, x: DoubleMatrix, u: DoubleMatrix
    ) -> StageDerivatives:
        """Derivatives of L^i_k restricted to agent i's own state and control blocks."""
        lay = self.layout
        ka = self.absolute_step(k)
        si, ci = lay.state_slice(i), lay.control_slice(i)
        own = self.own[i].stage_derivatives(ka, x[si], u[ci])
        lx, lxx = self._kernel_block_terms(i, k, x)
        return StageDerivatives(own.lx + lx, own.lu, own.lxx + lxx, own.luu, own.lux)

    def agent_block_terminal_derivatives(
        self, i: AgentId, k: int, x: DoubleMatrix
    ) -> TerminalDerivatives:
        si = self.layout.state_slice(i)
        own = self.own[i].terminal_derivatives(self.absolute_step(k), x[si])
        lx, lxx = self._kernel_block_terms(i, k, x)
        return TerminalDerivatives(own.lx + lx, own.lxx + lxx)

    def _kernel_block_terms(
        self, i: AgentId, k: int, x: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        lay = self.layout
        ka = self.absolute_step(k)
        si = lay.state_slice(i)
        ni = lay.state_dims[i]
        lx = np.zeros(ni)
        lxx = np.zeros((ni, ni))
        for j in lay.agents:
            kernel = self.kernel(i, j)
            if kernel is None:
                continue
            sj = lay.state_slice(j)
            c = self.coefficient(i, j, k)
            lx += c * kernel.gradient(ka, x[si], x[sj])[0]
            lxx += c * kernel.hessian(ka, x[si], x[sj])[0]
        return lx, lxx


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


class Constraint(ABC):
    """
    Vector constraint g(x_k, u_k) <= 0, or h = 0 when ``equality`` is set.

    ``agents`` lists the agents whose blocks the constraint reads (None: all).
    State-only constraints may also be used at the terminal step.
    """

    dim: int
    equality: bool = False
    state_only: bool = False
    agents: Optional[tuple[AgentId, ...]] = None

    @abstractmethod
    def value(self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]) -> DoubleMatrix:
        raise NotImplementedError

    def jacobian(
        self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        """(dg/dx, dg/du); dg/du is None when ``u`` is None."""
        x = _as_vector(x)
        gx = central_jacobian(lambda z: self.value(k, z, u), x)
        if u is None:
            return gx, None
        u = _as_vector(u)
        gu = central_jacobian(lambda v: self.value(k, x, v), u)
        return gx, gu

    def value_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        """Rows g(x_t, u_t) stacked as (T, dim)."""
        rows = [_as_vector(self.value(int(k), states[t], controls[t])) for t, k in enumerate(steps)]
        return np.stack(rows).reshape(len(steps), self.dim)

    def jacobian_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        """(T, dim, n) and (T, dim, m); rows without a control part are zero."""
        gx_rows, gu_rows = [], []
        for t, k in enumerate(steps):
            gx, gu = self.jacobian(int(k), states[t], controls[t])
            gx_rows.append(np.atleast_2d(gx))
            gu_rows.append(
                np.zeros((self.dim, controls.shape[1])) if gu is None else np.atleast_2d(gu)
            )
        return np.stack(gx_rows), np.stack(gu_rows)

    def control_box(self) -> Optional[tuple[slice, DoubleMatrix, DoubleMatrix]]:
        """(joint control slice, lower, upper) when the constraint is a simple box."""
        return None

    def involves(self, i: AgentId) -> bool:
        return self.agents is None or i in self.agents


class LinearConstraint(Constraint):
    """C_x x + C_u u + d <= 0 (or = 0)."""

    def __init__(
        self,
        Cx: DoubleMatrix,
        Cu: Optional[DoubleMatrix],
        d: DoubleMatrix,
        equality: bool = False,
        agents: Optional[tuple[AgentId, ...]] = None,
    ) -> None:
        self.Cx = np.atleast_2d(np.asarray(Cx, dtype=np.float64))
        self.Cu = None if Cu is None else np.atleast_2d(np.asarray(Cu, dtype=np.float64))
        self.d = _as_vector(d)
        self.dim = int(self.d.size)
        self.equality = equality
        self.state_only = self.Cu is None
        self.agents = agents

    def value(self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]) -> DoubleMatrix:
        out = self.Cx @ x + self.d
        if self.Cu is not None and u is not None:
            out = out + self.Cu @ u
        return out

    def jacobian(
        self, k: int, x: DoubleMatrix, u: Optional[DoubleMatrix]
    ) -> tuple[DoubleMatrix, Optional[DoubleMatrix]]:
        if u is None:
            return self.Cx.copy(), None
        gu = np.zeros((self.dim, _as_vector(u).size)) if self.Cu is None else self.Cu.copy()
        return self.Cx.copy(), gu

    def value_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> DoubleMatrix:
        out = states @ self.Cx.T + self.d
        if self.Cu is not None:
            out = out + controls @ self.Cu.T
        return out

    def jacobian_batch(
        self, steps: StepArray, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        T = len(steps)
        Cu = np.zeros((self.dim, controls.shape[1])) if self.Cu is None else self.Cu
        return np.broadcast_to(self.Cx, (T,) + self.Cx.shape), np.broadcast_to(Cu, (T,) + Cu.shape)


def constraint_violation(values: DoubleMatrix, equality: DoubleMatrix) -> DoubleMatrix:
    """Elementwise violation: max(g, 0) for inequalities, |h| for equalities."""
    values = np.asarray(values, dtype=np.float64)
    return np.where(equality, np.abs(values), np.maximum(values, 0.0))


class ConstraintSet:
    """Stage constraints (evaluated at k = 0..T-1) and terminal constraints (at T)."""

    def __init__(
        self,
        stage: Sequence[Constraint] = (),
        terminal: Sequence[Constraint] = (),
    ) -> None:
        self.stage: tuple[Constraint, ...] = tuple(stage)
        self.terminal: tuple[Constraint, ...] = tuple(terminal)
        for con in self.terminal:
            if not con.state_only:
                raise DimensionMismatchError(
                    "Terminal constraints must depend on the state only",
                    constraint=type(con).__name__,
                )
        self.stage_dim = sum(c.dim for c in self.stage)
        self.terminal_dim = sum(c.dim for c in self.terminal)
        self.stage_equality = np.concatenate(
            [np.full(c.dim, c.equality) for c in self.stage] or [np.zeros(0, dtype=bool)]
        )
        self.terminal_equality = np.concatenate(
            [np.full(c.dim, c.equality) for c in self.terminal] or [np.zeros(0, dtype=bool)]
        )

    @property
    def is_empty(self) -> bool:
        return self.stage_dim == 0 and self.terminal_dim == 0

    def stage_values(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> DoubleMatrix:
        if not self.stage:
            return np.zeros(0)
        return np.concatenate([_as_vector(c.value(k, x, u)) for c in self.stage])

    def terminal_values(self, k: int, x: DoubleMatrix) -> DoubleMatrix:
        if not self.terminal:
            return np.zeros(0)
        return np.concatenate([_as_vector(c.value(k, x, None)) for c in self.terminal])

    def stage_jacobian(
        self, k: int, x: DoubleMatrix, u: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        if not self.stage:
            return np.zeros((0, x.size)), np.zeros((0, u.size))
        gx_rows, gu_rows = [], []
        for con in self.stage:
            gx, gu = con.jacobian(k, x, u)
            gx_rows.append(np.atleast_2d(gx))
            gu_rows.append(np.zeros((con.dim, u.size)) if gu is None else np.atleast_2d(gu))
        return np.vstack(gx_rows), np.vstack(gu_rows)

    def terminal_jacobian(self, k: int, x: DoubleMatrix) -> DoubleMatrix:
        if not self.terminal:
            return np.zeros((0, x.size))
        return np.vstack([np.atleast_2d(c.jacobian(k, x, None)[0]) for c in self.terminal])

    def stage_values_batch(self, states: DoubleMatrix, controls: DoubleMatrix) -> DoubleMatrix:
        """Stage rows at k = 0..T-1, shape (T, stage_dim)."""
        T = len(controls)
        if not self.stage:
            return np.zeros((T, 0))
        steps = np.arange(T)
        return np.concatenate([c.value_batch(steps, states, controls) for c in self.stage], axis=1)

    def stage_jacobian_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> tuple[DoubleMatrix, DoubleMatrix]:
        T = len(controls)
        if not self.stage:
            return np.zeros((T, 0, states.shape[1])), np.zeros((T, 0, controls.shape[1]))
        steps = np.arange(T)
        blocks = [c.jacobian_batch(steps, states, controls) for c in self.stage]
        return (
            np.concatenate([gx for gx, _ in blocks], axis=1),
            np.concatenate([gu for _, gu in blocks], axis=1),
        )

    def control_box(self, m: int) -> tuple[DoubleMatrix, DoubleMatrix]:
        """Intersection of all box constraints on the joint control."""
        lower = np.full(m, -np.inf)
        upper = np.full(m, np.inf)
        for con in self.stage:
            box = con.control_box()
            if box is None:
                continue
            sl, lo, hi = box
            lower[sl] = np.maximum(lower[sl], lo)
            upper[sl] = np.minimum(upper[sl], hi)
        return lower, upper


# ---------------------------------------------------------------------------
# Game
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Game:
    """Dynamics, structured costs, constraints, initial state and horizon T."""

    dynamics: DynamicsModel
    costs: StructuredCost
    constraints: ConstraintSet
    x0: DoubleMatrix
    horizon: int
    goals: Optional[DoubleMatrix] = None

    def __post_init__(self) -> None:
        layout = self.dynamics.layout
        if self.costs.layout != layout:
            raise DimensionMismatchError(
                "Costs and dynamics disagree on the agent layout",
                dynamics=layout,
                costs=self.costs.layout,
            )
        x0 = _as_vector(self.x0)
        if x0.size != layout.n:
            raise DimensionMismatchError(
                "Initial state does not match the joint state dimension",
                agent=layout.offending_state_block(x0.size),
                expected=layout.n,
                got=x0.size,
            )
        if self.horizon < 1:
            raise ValueError(f"Horizon must be at least 1, got {self.horizon}")
        object.__setattr__(self, "x0", _frozen(x0))
        if self.goals is not None:
            goals = _as_vector(self.goals)
            if goals.size != layout.n:
                raise DimensionMismatchError("Goal state has the wrong dimension", got=goals.size)
            object.__setattr__(self, "goals", _frozen(goals))
        g = self.constraints.stage_values(0, x0, np.zeros(layout.m))
        if g.size != self.constraints.stage_dim:
            raise DimensionMismatchError(
                "Stage constraints returned an unexpected number of rows",
                expected=self.constraints.stage_dim,
                got=g.size,
            )

    @property
    def layout(self) -> AgentLayout:
        return self.dynamics.layout

    @property
    def agents(self) -> tuple[AgentId, ...]:
        return self.layout.agents

    @property
    def num_agents(self) -> int:
        return self.layout.num_agents

    @property
    def dt(self) -> float:
        return self.dynamics.dt

    def with_initial_state(self, x0: DoubleMatrix) -> "Game":
        return dataclasses.replace(self, x0=np.asarray(x0, dtype=np.float64))

    def window(self, start: int, length: int, x0: Optional[DoubleMatrix] = None) -> "Game":
        """Sub-game over steps start..start+length, started from ``x0``."""
        if start < 0 or length < 1:
            raise ValueError(f"Invalid window start={start} length={length}")
        return dataclasses.replace(
            self,
            costs=self.costs.shifted(start),
            x0=self.x0 if x0 is None else np.asarray(x0, dtype=np.float64),
            horizon=length,
        )

    def zero_controls(self) -> DoubleMatrix:
        return np.zeros((self.horizon, self.layout.m))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def rollout(
    dynamics: DynamicsModel,
    x0: DoubleMatrix,
    controls: DoubleMatrix,
    dt: Optional[float] = None,
) -> Trajectory:
    """Integrate x_{k+1} = f(x_k, u_k) from ``x0`` under ``controls``."""
    layout = dynamics.layout
    x0 = _as_vector(x0)
    if x0.size != layout.n:
        raise DimensionMismatchError(
            "Initial state does not match the joint state dimension",
            agent=layout.offending_state_block(x0.size),
            expected=layout.n,
            got=x0.size,
        )
    u = np.asarray(controls, dtype=np.float64)
    if u.ndim == 1 and layout.m == 1:
        u = u[:, np.newaxis]
    if u.ndim != 2 or u.shape[1] != layout.m:
        got = u.shape[-1] if u.ndim >= 1 else 0
        raise DimensionMismatchError(
            "Controls do not match the joint control dimension",
            agent=layout.offending_control_block(got),
            expected=layout.m,
            shape=u.shape,
        )

    T = u.shape[0]
    states = np.empty((T + 1, layout.n))
    states[0] = x0
    for k in range(T):
        states[k + 1] = dynamics.step(states[k], u[k], k)
        if not np.all(np.isfinite(states[k + 1])):
            raise DivergenceError("Rollout produced a non-finite state", step=k + 1)
    return Trajectory(states, u, dynamics.dt if dt is None else dt)


def _check_trajectory(game: Game, traj: Trajectory) -> None:
    layout = game.layout
    if traj.states.shape[1] != layout.n:
        raise DimensionMismatchError(
            "Trajectory state dimension does not match the game",
            agent=layout.offending_state_block(traj.states.shape[1]),
            expected=layout.n,
            got=traj.states.shape[1],
        )
    if traj.controls.shape[1] != layout.m:
        raise DimensionMismatchError(
            "Trajectory control dimension does not match the game",
            agent=layout.offending_control_block(traj.controls.shape[1]),
            expected=layout.m,
            got=traj.controls.shape[1],
        )
    if traj.horizon != game.horizon:
        raise DimensionMismatchError(
            "Trajectory horizon does not match the game", expected=game.horizon, got=traj.horizon
        )


def agent_cost(game: Game, traj: Trajectory, i: AgentId) -> float:
    """J^i = L^i_T(x_T) + sum_k L^i_k(x_k, u^i_k)."""
    _check_trajectory(game, traj)
    game.layout.check_agent(i)
    costs = game.costs
    total = sum(
        costs.agent_stage(i, k, traj.states[k], traj.controls[k]) for k in range(traj.horizon)
    )
    return float(total + costs.agent_terminal(i, traj.horizon, traj.states[-1]))


@dataclass(frozen=True)
class FeasibilityReport:
    """Dynamics defect and constraint violations of a trajectory."""

    dynamics_defect: float
    stage_violation: float
    terminal_violation: float
    tol: float
    feasible: bool

    @property
    def max_violation(self) -> float:
        return max(self.stage_violation, self.terminal_violation)


def feasibility_report(game: Game, traj: Trajectory, tol: float) -> FeasibilityReport:
    if tol < 0:
        raise ValueError(f"tol must be non-negative, got {tol}")
    _check_trajectory(game, traj)
    cons = game.constraints
    defect = 0.0
    stage = 0.0
    for k in range(traj.horizon):
        x, u = traj.states[k], traj.controls[k]
        gap = traj.states[k + 1] - game.dynamics.step(x, u, k)
        defect = max(defect, float(np.max(np.abs(gap))))
        if cons.stage_dim:
            viol = constraint_violation(cons.stage_values(k, x, u), cons.stage_equality)
            stage = max(stage, float(np.max(viol)))
    terminal = 0.0
    if cons.terminal_dim:
        viol = constraint_violation(
            cons.terminal_values(traj.horizon, traj.states[-1]), cons.terminal_equality
        )
        terminal = float(np.max(viol))
    feasible = defect <= tol and stage <= tol and terminal <= tol
    return FeasibilityReport(defect, stage, terminal, tol, feasible)

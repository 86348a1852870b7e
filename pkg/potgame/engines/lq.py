"""
LQ Games - exact machinery for linear-quadratic dynamic games.

Cost convention (no state cost at k = 0, no control cost at k = T):

    J^i = sum_{k=1}^{T} 1/2 x_k' Q^i_k x_k + sum_{k=0}^{T-1} 1/2 sum_j u^j_k' R^{ij}_k u^j_k

The open-loop Nash oracle assembles every agent's first-order conditions
(stationarity, costate recursion, dynamics) into one sparse linear system and
solves it directly. For convex per-agent problems these conditions are
necessary and sufficient, so the solution is the exact equilibrium.
"""

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from potgame.engines.game import (
    AgentId,
    AgentLayout,
    ConstraintSet,
    DoubleMatrix,
    DynamicsModel,
    Game,
    LinearDynamics,
    QuadraticOwnCost,
    QuadraticPairKernel,
    StageDerivatives,
    StructuredCost,
    TerminalDerivatives,
    Trajectory,
)
from potgame.errors import (
    DimensionMismatchError,
    NoUniqueEquilibriumError,
    NumericalConditioningError,
    WrongStructureError,
)
from potgame.utils.logger import get_logger

logger = get_logger(__name__)

PSD_FLOOR = -1e-10
PD_FLOOR = 1e-10


def _stack(matrix: object, count: int) -> DoubleMatrix:
    """Per-step stack of ``count`` matrices from a constant or already stacked input."""
    array = np.asarray(matrix, dtype=np.float64)
    if array.ndim == 2:
        return np.repeat(array[np.newaxis], count, axis=0)
    if array.ndim != 3 or array.shape[0] != count:
        raise DimensionMismatchError(
            "Expected a matrix or a per-step stack", shape=array.shape, steps=count
        )
    return array.copy()


def _min_eig(matrix: DoubleMatrix) -> float:
    return float(np.min(np.linalg.eigvalsh(0.5 * (matrix + matrix.T))))


@dataclass(frozen=True, eq=False)
class LqGame:
    """
    Time-indexed LQ game.

    A: (T, n, n); B: (T, n, m) with agent column blocks; Q: (N, T+1, n, n) with
    Q[:, 0] unused; R[i][j]: (T, m_j, m_j).
    """

    A: DoubleMatrix
    B: DoubleMatrix
    Q: DoubleMatrix
    R: tuple[tuple[DoubleMatrix, ...], ...]
    control_dims: tuple[int, ...]
    x0: DoubleMatrix
    state_dims: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        T, n = self.A.shape[0], self.A.shape[1]
        N = len(self.control_dims)
        m = sum(self.control_dims)
        if self.A.shape != (T, n, n) or self.B.shape != (T, n, m):
            raise DimensionMismatchError("Inconsistent A/B shapes", A=self.A.shape, B=self.B.shape)
        if self.Q.shape != (N, T + 1, n, n):
            raise DimensionMismatchError("Q must be (N, T+1, n, n)", shape=self.Q.shape)
        if len(self.R) != N or any(len(row) != N for row in self.R):
            raise DimensionMismatchError("R must hold one block per ordered agent pair")
        if np.asarray(self.x0).shape != (n,):
            raise DimensionMismatchError("x0 has the wrong dimension", shape=np.shape(self.x0))
        if self.state_dims is not None and sum(self.state_dims) != n:
            raise DimensionMismatchError("state_dims do not sum to n", state_dims=self.state_dims)
        for i in range(N):
            for k in range(1, T + 1):
                if _min_eig(self.Q[i, k]) < PSD_FLOOR:
                    raise NumericalConditioningError(
                        "Q^i_k must be positive semidefinite", agent=i, k=k
                    )
            for k in range(T):
                if _min_eig(self.R[i][i][k]) < PD_FLOOR:
                    raise NumericalConditioningError(
                        "R^ii_k must be positive definite", agent=i, k=k
                    )

    @classmethod
    def from_blocks(
        cls,
        A: object,
        B: object,
        Q: Sequence[object],
        R: Mapping[tuple[int, int], object],
        control_dims: Sequence[int],
        x0: object,
        horizon: int,
        state_dims: Optional[Sequence[int]] = None,
    ) -> "LqGame":
        """Build from constant or stacked blocks; missing R^{ij} (i != j) default to zero."""
        T = horizon
        dims = tuple(int(d) for d in control_dims)
        N = len(dims)
        Qs = np.stack([_stack(q, T + 1) for q in Q])
        Qs[:, 0] = 0.0
        rows = []
        for i in range(N):
            row = []
            for j in range(N):
                block = R.get((i, j))
                if block is None:
                    if i == j:
                        raise DimensionMismatchError("Missing R^ii block", agent=i)
                    block = np.zeros((dims[j], dims[j]))
                row.append(_stack(block, T))
            rows.append(tuple(row))
        return cls(
            A=_stack(A, T),
            B=_stack(B, T),
            Q=Qs,
            R=tuple(rows),
            control_dims=dims,
            x0=np.asarray(x0, dtype=np.float64),
            state_dims=None if state_dims is None else tuple(int(d) for d in state_dims),
        )

    @property
    def horizon(self) -> int:
        return int(self.A.shape[0])

    @property
    def n(self) -> int:
        return int(self.A.shape[1])

    @property
    def m(self) -> int:
        return sum(self.control_dims)

    @property
    def num_agents(self) -> int:
        return len(self.control_dims)

    def control_slice(self, i: AgentId) -> slice:
        start = sum(self.control_dims[:i])
        return slice(start, start + self.control_dims[i])

    def with_initial_state(self, x0: object) -> "LqGame":
        return dataclasses.replace(self, x0=np.asarray(x0, dtype=np.float64))

    def agent_cost(self, traj: Trajectory, i: AgentId) -> float:
        total = 0.0
        for k in range(1, self.horizon + 1):
            x = traj.states[k]
            total += 0.5 * x @ self.Q[i, k] @ x
        for k in range(self.horizon):
            for j in range(self.num_agents):
                uj = traj.controls[k, self.control_slice(j)]
                total += 0.5 * uj @ self.R[i][j][k] @ uj
        return float(total)

    def rollout(self, controls: DoubleMatrix, x0: Optional[DoubleMatrix] = None) -> Trajectory:
        T = self.horizon
        states = np.empty((T + 1, self.n))
        states[0] = self.x0 if x0 is None else x0
        for k in range(T):
            states[k + 1] = self.A[k] @ states[k] + self.B[k] @ controls[k]
        return Trajectory(states, controls)

    def _layout(self) -> AgentLayout:
        if self.state_dims is None:
            raise WrongStructureError("Agent state blocks are unknown for this LQ game")
        return AgentLayout(self.state_dims, self.control_dims)

    def to_dynamics(self) -> DynamicsModel:
        """Per-agent linear dynamics; requires block-diagonal A and B."""
        layout = self._layout()
        agents = []
        for i in layout.agents:
            si, ci = layout.state_slice(i), layout.control_slice(i)
            A_off = self.A.copy()
            A_off[:, si, si] = 0.0
            B_off = self.B.copy()
            B_off[:, si, ci] = 0.0
            if np.any(A_off[:, si, :] != 0.0) or np.any(B_off[:, si, :] != 0.0):
                raise WrongStructureError("LQ dynamics are not block separable", agent=i)
            agents.append(LinearDynamics(self.A[:, si, si], self.B[:, si, ci]))
        return DynamicsModel(agents)

    def to_structured_game(self) -> Game:
        """
        Two-agent game in own-cost plus symmetric-kernel form.

        L^{11} = 1/2 x1'(Q^1_11 - Q^2_11) x1 + 1/2 u1'R^11 u1, likewise L^{22};
        L^{12}(x1, x2) = x1'M x2 + 1/2 x1'Q^2_11 x1 + 1/2 x2'Q^1_22 x2 with
        M = Q^1_12 = Q^2_12; all coefficients 1.
        """
        if self.num_agents != 2:
            raise WrongStructureError(
                "Structured form is available for two-agent games", num_agents=self.num_agents
            )
        layout = self._layout()
        s1, s2 = layout.state_slice(0), layout.state_slice(1)
        Q1, Q2 = self.Q[0], self.Q[1]
        if not np.allclose(Q1[:, s1, s2], Q2[:, s1, s2], rtol=0.0, atol=1e-12):
            raise WrongStructureError("Agents disagree on the state coupling block Q_12")
        if np.any(self.R[0][1] != 0.0) or np.any(self.R[1][0] != 0.0):
            raise WrongStructureError("Agent costs depend on the other agent's controls")
        own = (
            QuadraticOwnCost(Q1[:, s1, s1] - Q2[:, s1, s1], self.R[0][0]),
            QuadraticOwnCost(Q2[:, s2, s2] - Q1[:, s2, s2], self.R[1][1]),
        )
        kernel = QuadraticPairKernel(Q2[:, s1, s1], Q1[:, s1, s2], Q1[:, s2, s2])
        costs = StructuredCost.symmetric(layout, own, {(0, 1): kernel}, np.ones((2, 2)))
        return Game(self.to_dynamics(), costs, ConstraintSet(), self.x0, self.horizon)


@dataclass(frozen=True, eq=False)
class LqPotential:
    """Potential LQR problem: Q (T+1, n, n) with Q[0] unused, R (T, m, m)."""

    Q: DoubleMatrix
    R: DoubleMatrix

    def __post_init__(self) -> None:
        T = self.R.shape[0]
        if self.Q.shape[0] != T + 1:
            raise DimensionMismatchError("Q must hold T+1 matrices", Q=self.Q.shape, R=self.R.shape)
        for k in range(1, T + 1):
            if _min_eig(self.Q[k]) < PSD_FLOOR:
                raise NumericalConditioningError("Q_k must be positive semidefinite", k=k)
        for k in range(T):
            if _min_eig(self.R[k]) < PD_FLOOR:
                raise NumericalConditioningError("R_k must be positive definite", k=k)

    @classmethod
    def from_blocks(cls, Q: object, R: object, horizon: int) -> "LqPotential":
        Qs = _stack(Q, horizon + 1)
        Qs[0] = 0.0
        return cls(Qs, _stack(R, horizon))

    @property
    def horizon(self) -> int:
        return int(self.R.shape[0])

    def objective(self) -> "LqObjective":
        return LqObjective(self)


class LqObjective:
    """Stage-additive view of an ``LqPotential`` for the iterative solvers."""

    def __init__(self, potential: LqPotential) -> None:
        self.potential = potential

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        pot = self.potential
        return float(0.5 * x @ pot.Q[k] @ x + 0.5 * u @ pot.R[k] @ u)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        return float(0.5 * x @ self.potential.Q[k] @ x)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        Q, R = self.potential.Q[k], self.potential.R[k]
        return StageDerivatives(Q @ x, R @ u, Q.copy(), R.copy(), np.zeros((u.size, x.size)))

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        Q = self.potential.Q[k]
        return TerminalDerivatives(Q @ x, Q.copy())


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Cost-to-go matrices P_0..P_T and feedback gains K_0..K_{T-1} (u = -K x)."""

    P: DoubleMatrix
    K: DoubleMatrix

    def value(self, x0: DoubleMatrix) -> float:
        return float(0.5 * x0 @ self.P[0] @ x0)


def riccati(pot: LqPotential, A: object, B: object) -> RiccatiSolution:
    """Backward Riccati recursion of the finite-horizon discrete-time LQR."""
    T = pot.horizon
    As, Bs = _stack(A, T), _stack(B, T)
    n, m = As.shape[1], Bs.shape[2]
    P = np.zeros((T + 1, n, n))
    K = np.zeros((T, m, n))
    P[T] = pot.Q[T]
    for k in range(T - 1, -1, -1):
        Pn = P[k + 1]
        H = pot.R[k] + Bs[k].T @ Pn @ Bs[k]
        try:
            factor = linalg.cho_factor(H)
        except linalg.LinAlgError as exc:
            raise NumericalConditioningError("R + B'PB is not positive definite", k=k) from exc
        K[k] = linalg.cho_solve(factor, Bs[k].T @ Pn @ As[k])
        Pk = pot.Q[k] + As[k].T @ Pn @ (As[k] - Bs[k] @ K[k])
        P[k] = 0.5 * (Pk + Pk.T)
    return RiccatiSolution(P, K)


def lqr_solve(
    pot: LqPotential, A: object, B: object, x0: object, dt: float = 1.0
) -> Trajectory:
    """Minimize the potential LQR objective: Riccati recursion, then forward rollout."""
    T = pot.horizon
    As, Bs = _stack(A, T), _stack(B, T)
    sol = riccati(pot, As, Bs)
    states = np.empty((T + 1, As.shape[1]))
    controls = np.empty((T, Bs.shape[2]))
    states[0] = np.asarray(x0, dtype=np.float64)
    for k in range(T):
        controls[k] = -sol.K[k] @ states[k]
        states[k + 1] = As[k] @ states[k] + Bs[k] @ controls[k]
    return Trajectory(states, controls, dt)


# ---------------------------------------------------------------------------
# Stacked first-order system
# ---------------------------------------------------------------------------


class _BlockBuilder:
    """COO accumulator for a sparse block matrix."""

    def __init__(self) -> None:
        self.rows: list[DoubleMatrix] = []
        self.cols: list[DoubleMatrix] = []
        self.vals: list[DoubleMatrix] = []

    def add(self, row: int, col: int, block: DoubleMatrix) -> None:
        block = np.atleast_2d(block)
        r, c = np.nonzero(block)
        if r.size:
            self.rows.append(r + row)
            self.cols.append(c + col)
            self.vals.append(block[r, c])

    def build(self, size: int) -> sparse.csc_matrix:
        if not self.rows:
            return sparse.csc_matrix((size, size))
        return sparse.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(size, size),
        ).tocsc()


@dataclass(frozen=True, eq=False)
class NashSolution:
    """Open-loop equilibrium trajectory and each free agent's costates lambda^i_1..lambda^i_T."""

    trajectory: Trajectory
    costates: DoubleMatrix  # (len(agents), T+1, n); index 0 unused
    agents: tuple[AgentId, ...]


def _solve_stacked(
    game: LqGame,
    free: Sequence[AgentId],
    fixed_controls: Optional[DoubleMatrix] = None,
) -> NashSolution:
    T, n, m = game.horizon, game.n, game.m
    free = tuple(free)
    fixed = np.zeros((T, m)) if fixed_controls is None else np.asarray(fixed_controls, np.float64)
    free_cols = np.concatenate([np.arange(m)[game.control_slice(i)] for i in free])
    fixed_mask = np.ones(m, dtype=bool)
    fixed_mask[free_cols] = False
    mf = free_cols.size
    offsets = np.cumsum([0] + [game.control_dims[i] for i in free])
    local = {i: slice(int(offsets[f]), int(offsets[f + 1])) for f, i in enumerate(free)}

    x_off = 0
    u_off = T * n
    l_off = u_off + T * mf
    size = l_off + len(free) * T * n

    def xi(k: int) -> int:  # k = 1..T
        return x_off + (k - 1) * n

    def ui(k: int) -> int:  # k = 0..T-1
        return u_off + k * mf

    def li(f: int, k: int) -> int:  # k = 1..T
        return l_off + (f * T + (k - 1)) * n

    mat = _BlockBuilder()
    rhs = np.zeros(size)
    eye = np.eye(n)
    row = 0

    # dynamics: x_{k+1} - A_k x_k - B^free_k u^free_k = B^fixed_k u^fixed_k
    for k in range(T):
        mat.add(row, xi(k + 1), eye)
        if k > 0:
            mat.add(row, xi(k), -game.A[k])
        mat.add(row, ui(k), -game.B[k][:, free_cols])
        rhs[row : row + n] = game.B[k][:, fixed_mask] @ fixed[k, fixed_mask]
        if k == 0:
            rhs[row : row + n] += game.A[0] @ game.x0
        row += n

    # stationarity: R^ii_k u^i_k + B^i_k' lambda^i_{k+1} = 0
    for f, i in enumerate(free):
        ci = game.control_slice(i)
        for k in range(T):
            mi = game.control_dims[i]
            mat.add(row, ui(k) + local[i].start, game.R[i][i][k])
            mat.add(row, li(f, k + 1), game.B[k][:, ci].T)
            row += mi

    # costates: Q^i_k x_k + A_k' lambda^i_{k+1} - lambda^i_k = 0, Q^i_T x_T - lambda^i_T = 0
    for f, i in enumerate(free):
        for k in range(1, T + 1):
            mat.add(row, xi(k), game.Q[i, k])
            mat.add(row, li(f, k), -eye)
            if k < T:
                mat.add(row, li(f, k + 1), game.A[k].T)
            row += n

    system = mat.build(size)
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            z = spsolve(system, rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise NoUniqueEquilibriumError(
                "Stacked first-order system is singular", agents=free
            ) from exc
    z = np.atleast_1d(z)
    residual = float(np.max(np.abs(system @ z - rhs), initial=0.0))
    if not np.all(np.isfinite(z)) or residual > 1e-6 * (1.0 + float(np.max(np.abs(rhs)))):
        raise NoUniqueEquilibriumError(
            "Stacked first-order system is singular", agents=free, residual=residual
        )

    states = np.empty((T + 1, n))
    states[0] = game.x0
    states[1:] = z[x_off:u_off].reshape(T, n)
    controls = fixed.copy()
    controls[:, free_cols] = z[u_off:l_off].reshape(T, mf)
    costates = np.zeros((len(free), T + 1, n))
    costates[:, 1:] = z[l_off:].reshape(len(free), T, n)
    return NashSolution(Trajectory(states, controls), costates, free)


def solve_open_loop_nash(game: LqGame) -> NashSolution:
    """Exact open-loop Nash equilibrium with every agent's costates."""
    sol = _solve_stacked(game, tuple(range(game.num_agents)))
    logger.debug("open_loop_nash_solved", agents=game.num_agents, horizon=game.horizon)
    return sol


def open_loop_nash_exact(game: LqGame) -> Trajectory:
    return solve_open_loop_nash(game).trajectory


def agent_best_response(game: LqGame, traj: Trajectory, i: AgentId) -> Trajectory:
    """Agent i's exact optimal reply with every other agent's controls held at ``traj``."""
    return _solve_stacked(game, (i,), traj.controls).trajectory


def costates_along(game: LqGame, traj: Trajectory, i: AgentId) -> DoubleMatrix:
    """lambda^i_T = Q^i_T x_T, lambda^i_k = Q^i_k x_k + A_k' lambda^i_{k+1}."""
    T = game.horizon
    lam = np.zeros((T + 1, game.n))
    lam[T] = game.Q[i, T] @ traj.states[T]
    for k in range(T - 1, 0, -1):
        lam[k] = game.Q[i, k] @ traj.states[k] + game.A[k].T @ lam[k + 1]
    return lam


def nash_kkt_residual(game: LqGame, traj: Trajectory) -> float:
    """Max violation of the stacked first-order system along ``traj``."""
    T = game.horizon
    worst = float(np.max(np.abs(traj.states[0] - game.x0)))
    for k in range(T):
        pred = game.A[k] @ traj.states[k] + game.B[k] @ traj.controls[k]
        worst = max(worst, float(np.max(np.abs(traj.states[k + 1] - pred))))
    for i in range(game.num_agents):
        lam = costates_along(game, traj, i)
        ci = game.control_slice(i)
        for k in range(T):
            grad = game.R[i][i][k] @ traj.controls[k, ci] + game.B[k][:, ci].T @ lam[k + 1]
            worst = max(worst, float(np.max(np.abs(grad), initial=0.0)))
    return worst


# ---------------------------------------------------------------------------
# Monte-Carlo equivalence
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    """Potential-LQR versus exact Nash trajectories over sampled initial states."""

    n: int
    radius: float
    tol: float
    deviations: DoubleMatrix
    max_deviation: float
    mean_potential: DoubleMatrix
    std_potential: DoubleMatrix
    mean_nash: DoubleMatrix
    std_nash: DoubleMatrix

    @property
    def equivalent(self) -> bool:
        return self.max_deviation <= self.tol


def monte_carlo_equivalence(
    game: LqGame,
    pot: LqPotential,
    n: int,
    radius: float,
    seed: int = 0,
    tol: float = 1e-8,
) -> EquivalenceReport:
    """Compare both solutions from ``n`` initial states uniform in an inf-ball around x0."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    starts = game.x0 + rng.uniform(-radius, radius, size=(n, game.n))
    pot_states = np.empty((n, game.horizon + 1, game.n))
    nash_states = np.empty_like(pot_states)
    deviations = np.empty(n)
    for r, x0 in enumerate(starts):
        nash = open_loop_nash_exact(game.with_initial_state(x0))
        opt = lqr_solve(pot, game.A, game.B, x0)
        pot_states[r] = opt.states
        nash_states[r] = nash.states
        deviations[r] = opt.distance(nash)
    report = EquivalenceReport(
        n=n,
        radius=radius,
        tol=tol,
        deviations=deviations,
        max_deviation=float(np.max(deviations)),
        mean_potential=pot_states.mean(axis=0),
        std_potential=pot_states.std(axis=0),
        mean_nash=nash_states.mean(axis=0),
        std_nash=nash_states.std(axis=0),
    )
    logger.info(
        "lq_equivalence_checked",
        runs=n,
        radius=radius,
        max_deviation=report.max_deviation,
        equivalent=report.equivalent,
    )
    return report

"""
KKT Check - per-agent generalized Nash first-order conditions at a potential solution.

With potential multipliers xi_k (dynamics) and lam_k >= 0 (constraints, reported
as delta = -lam), agent i is assigned

    nu^i_k = w^i_k xi_k,    m^i_k = w^i_k lam_k

and its Lagrangian stationarity residuals are evaluated in its own blocks:

    u^i_k:            dL^i_k/du^i + B^i_k' nu^i_k + Gu^i_k' m^i_k
    x^i_k, 0<k<T:     dL^i_k/dx^i + (A_k' nu^i_k - nu^i_{k-1} + Gx_k' m^i_k)[i]
    x^i_T:            dL^i_T/dx^i + (-nu^i_{T-1} + G_T' m^i_T)[i]

The residuals vanish at a potential stationary point when the weights are
constant in k.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from potgame.engines.auglag import constraint_values
from potgame.engines.game import DoubleMatrix, Game, feasibility_report
from potgame.engines.potential import PotentialCertificate
from potgame.engines.solution import OcpSolution
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class KktReport:
    """Residuals are infinity norms; multipliers are reported in the non-positive convention."""

    stationarity_x: DoubleMatrix  # (N, T+1); column 0 is unused
    stationarity_u: DoubleMatrix  # (N, T)
    complementarity: float
    primal: float
    dual: float
    dynamics_multipliers: DoubleMatrix  # (N, T, n)
    constraint_multipliers: DoubleMatrix  # (N, T, c)
    terminal_multipliers: DoubleMatrix  # (N, c_T)
    tol: float
    partial: bool

    @property
    def max_stationarity(self) -> float:
        return max(
            float(np.max(self.stationarity_x, initial=0.0)),
            float(np.max(self.stationarity_u, initial=0.0)),
        )

    @property
    def max_residual(self) -> float:
        return max(self.max_stationarity, self.complementarity, self.primal, self.dual)

    @property
    def passed(self) -> bool:
        return not self.partial and self.max_residual <= self.tol

    def agent_residual(self, i: int) -> float:
        return max(
            float(np.max(self.stationarity_x[i], initial=0.0)),
            float(np.max(self.stationarity_u[i], initial=0.0)),
        )


def _norm(v: DoubleMatrix) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def kkt_check(
    game: Game,
    cert: PotentialCertificate,
    sol: OcpSolution,
    tol: float = 1e-6,
    weights: Optional[DoubleMatrix] = None,
) -> KktReport:
    """
    Evaluate every agent's KKT system at ``sol`` with multipliers scaled by the weights.

    Agent i's multipliers are the potential problem's multipliers times its
    weight at the same step: mu^i_k = w^i_k delta_k for the constraints and
    psi^i_k = w^i_k xi_k for the dynamics, with w^i_T on the terminal block.
    ``weights`` (N, T+1) overrides the certificate weights. The report is
    marked partial when ``sol`` carries no multipliers or did not converge.
    """
    cert.check_game(game)
    lay = game.layout
    traj = sol.trajectory
    T = traj.horizon
    N = lay.num_agents
    cons = game.constraints

    if not cert.time_invariant_weights:
        logger.warning("kkt_time_varying_weights", structure=cert.structure.value)

    partial = not sol.converged
    xi = sol.xi
    lam = -sol.delta
    lam_terminal = -sol.delta_terminal
    if xi.shape != (T, lay.n):
        partial = True
        xi = np.zeros((T, lay.n))
    if lam.shape != (T, cons.stage_dim) or lam_terminal.shape != (cons.terminal_dim,):
        partial = True
        lam = np.zeros((T, cons.stage_dim))
        lam_terminal = np.zeros(cons.terminal_dim)
    if partial:
        logger.warning("kkt_partial_report", status=sol.status.value, horizon=T)

    if weights is None:
        weights = np.array([[cert.weight(i, k) for k in range(T + 1)] for i in lay.agents])

    A_list, B_list, Gx_list, Gu_list = [], [], [], []
    for k in range(T):
        x, u = traj.states[k], traj.controls[k]
        A, B = game.dynamics.jacobians(x, u, k)
        Gx, Gu = cons.stage_jacobian(k, x, u)
        A_list.append(A)
        B_list.append(B)
        Gx_list.append(Gx)
        Gu_list.append(Gu)
    G_terminal = cons.terminal_jacobian(T, traj.states[-1])

    stat_x = np.zeros((N, T + 1))
    stat_u = np.zeros((N, T))
    nu = np.zeros((N, T, lay.n))
    m = np.zeros((N, T, cons.stage_dim))
    m_terminal = np.zeros((N, cons.terminal_dim))

    for i in lay.agents:
        si, ci = lay.state_slice(i), lay.control_slice(i)
        nu[i] = weights[i, :T, np.newaxis] * xi
        m[i] = weights[i, :T, np.newaxis] * lam
        m_terminal[i] = weights[i, T] * lam_terminal
        for k in range(T):
            x, u = traj.states[k], traj.controls[k]
            gx, gu = game.costs.agent_stage_gradient(i, k, x, u)
            r_u = gu[ci] + B_list[k][:, ci].T @ nu[i, k] + Gu_list[k][:, ci].T @ m[i, k]
            stat_u[i, k] = _norm(r_u)
            if k > 0:
                r_x = gx + A_list[k].T @ nu[i, k] - nu[i, k - 1] + Gx_list[k].T @ m[i, k]
                stat_x[i, k] = _norm(r_x[si])
        gT = game.costs.agent_terminal_gradient(i, T, traj.states[-1])
        r_T = gT - nu[i, T - 1] + G_terminal.T @ m_terminal[i]
        stat_x[i, T] = _norm(r_T[si])

    g, g_terminal = constraint_values(cons, traj)
    comp = max(
        _norm(np.where(cons.stage_equality, 0.0, lam * g)),
        _norm(np.where(cons.terminal_equality, 0.0, lam_terminal * g_terminal)),
    )
    dual = max(
        _norm(np.where(cons.stage_equality, 0.0, np.minimum(lam, 0.0))),
        _norm(np.where(cons.terminal_equality, 0.0, np.minimum(lam_terminal, 0.0))),
    )
    feas = feasibility_report(game, traj, tol)
    primal = max(feas.dynamics_defect, feas.max_violation)

    report = KktReport(
        stationarity_x=stat_x,
        stationarity_u=stat_u,
        complementarity=comp,
        primal=primal,
        dual=dual,
        dynamics_multipliers=nu,
        constraint_multipliers=-m,
        terminal_multipliers=-m_terminal,
        tol=tol,
        partial=partial,
    )
    logger.info(
        "kkt_checked",
        agents=N,
        max_stationarity=report.max_stationarity,
        complementarity=comp,
        primal=primal,
        passed=report.passed,
        partial=partial,
    )
    return report

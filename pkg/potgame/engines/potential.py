"""
Potential Certification - weighted constrained potential dynamic games.

A structured game is certified under one of the supported coefficient
structures; the certificate carries the weights w^i_k and the scales used to
assemble the potential stage cost

    L_k = sum_i s^i_k L^{ii}_k + sum_{i<j} p^{ij}_k L^{ij}_k

(and the analogous terminal cost). Supported structures:

    dyadic            N = 2,          w^1 = 1/c^2,          s = (c^2, c^1),     p = c^1 c^2
    uniform_outgoing  c^{ij} = c^i,   w^i = 1/prod_{j!=i} c^j, s^i = prod_{j!=i} c^j, p = prod_l c^l
    uniform_incoming  c^{ij} = c^j,   w^i = 1/c^i,          s^i = c^i,          p^{ij} = c^i c^j
    exact             c^{ij} = 1,     w^i = 1,              s^i = 1,            p = 1
"""

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from potgame.config import settings
from potgame.engines.game import (
    AgentId,
    DoubleMatrix,
    Game,
    StageDerivatives,
    StepArray,
    StructuredCost,
    TerminalDerivatives,
    Trajectory,
    agent_cost,
    feasibility_report,
    rollout,
    stage_cost_batch,
    stage_derivatives_batch,
)
from potgame.errors import (
    AsymmetricKernelError,
    CertificateMismatchError,
    SamplingError,
    WrongStructureError,
)
from potgame.utils.finite_diff import central_gradient
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


class PotentialStructure(str, Enum):
    """Coefficient structures that admit a potential."""

    DYADIC = "dyadic"
    UNIFORM_OUTGOING = "uniform_outgoing"
    UNIFORM_INCOMING = "uniform_incoming"
    EXACT = "exact"


@dataclass(frozen=True, eq=False)
class PotentialCertificate:
    """Proof object: structure, weights w^i_k and the potential's term scales."""

    structure: PotentialStructure
    costs: StructuredCost
    weights: DoubleMatrix  # (N, K)
    own_scales: DoubleMatrix  # (N, K)
    pair_scales: DoubleMatrix  # (N, N, K), symmetric in (i, j)

    def __post_init__(self) -> None:
        for name in ("weights", "own_scales", "pair_scales"):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if not np.all(np.isfinite(array)) or np.any(array <= 0):
                raise WrongStructureError(f"Certificate {name} must be strictly positive")
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def num_agents(self) -> int:
        return self.costs.num_agents

    @property
    def is_exact(self) -> bool:
        return bool(np.all(self.weights == 1.0))

    @property
    def time_invariant_weights(self) -> bool:
        return bool(np.all(self.weights == self.weights[:, :1]))

    @property
    def potential(self) -> "PotentialObjective":
        return PotentialObjective(self)

    def weight(self, i: AgentId, k: int) -> float:
        return float(self.weights[i, self.costs.coefficient_index(k)])

    def weights_at(self, k: int) -> DoubleMatrix:
        return np.array(self.weights[:, self.costs.coefficient_index(k)])

    def own_scale(self, i: AgentId, k: int) -> float:
        return float(self.own_scales[i, self.costs.coefficient_index(k)])

    def pair_scale(self, i: AgentId, j: AgentId, k: int) -> float:
        return float(self.pair_scales[i, j, self.costs.coefficient_index(k)])

    def window(self, start: int) -> "PotentialCertificate":
        """Certificate for the game window that starts at step ``start``."""
        return dataclasses.replace(self, costs=self.costs.shifted(start))

    def check_game(self, game: Game) -> None:
        """Raise unless this certificate was issued for ``game``'s costs."""
        costs = game.costs
        if costs is self.costs:
            return
        if (
            costs.num_agents != self.costs.num_agents
            or costs.time_offset != self.costs.time_offset
            or costs.coefficients.shape != self.costs.coefficients.shape
            or not np.array_equal(costs.coefficients, self.costs.coefficients)
        ):
            raise CertificateMismatchError(
                "Certificate does not match the game",
                certificate_agents=self.costs.num_agents,
                game_agents=costs.num_agents,
                certificate_offset=self.costs.time_offset,
                game_offset=costs.time_offset,
            )


class PotentialObjective:
    """Potential stage/terminal costs with gradients and Gauss-Newton Hessians."""

    def __init__(self, certificate: PotentialCertificate) -> None:
        self.certificate = certificate
        self.costs = certificate.costs
        self.layout = certificate.costs.layout

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        cert, costs, lay = self.certificate, self.costs, self.layout
        ka = costs.absolute_step(k)
        total = 0.0
        for i in lay.agents:
            xi, ui = x[lay.state_slice(i)], u[lay.control_slice(i)]
            total += cert.own_scale(i, k) * costs.own[i].stage(ka, xi, ui)
        return total + self._pair_sum(k, x)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        cert, costs, lay = self.certificate, self.costs, self.layout
        ka = costs.absolute_step(k)
        total = 0.0
        for i in lay.agents:
            total += cert.own_scale(i, k) * costs.own[i].terminal(ka, x[lay.state_slice(i)])
        return total + self._pair_sum(k, x)

    def _pair_sum(self, k: int, x: DoubleMatrix) -> float:
        cert, costs, lay = self.certificate, self.costs, self.layout
        ka = costs.absolute_step(k)
        total = 0.0
        for i, j in costs.pairs():
            kernel = costs.pair_kernel(i, j)
            if kernel is not None:
                value = kernel.value(ka, x[lay.state_slice(i)], x[lay.state_slice(j)])
                total += cert.pair_scale(i, j, k) * value
        return float(total)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        cert, costs, lay = self.certificate, self.costs, self.layout
        ka = costs.absolute_step(k)
        lx, lu = np.zeros(lay.n), np.zeros(lay.m)
        lxx, luu = np.zeros((lay.n, lay.n)), np.zeros((lay.m, lay.m))
        lux = np.zeros((lay.m, lay.n))
        for i in lay.agents:
            si, ci = lay.state_slice(i), lay.control_slice(i)
            s = cert.own_scale(i, k)
            d = costs.own[i].stage_derivatives(ka, x[si], u[ci])
            lx[si] += s * d.lx
            lu[ci] += s * d.lu
            lxx[si, si] += s * d.lxx
            luu[ci, ci] += s * d.luu
            lux[ci, si] += s * d.lux
        self._add_pair_derivatives(k, x, lx, lxx)
        return StageDerivatives(lx, lu, 0.5 * (lxx + lxx.T), 0.5 * (luu + luu.T), lux)

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        cert, costs, lay = self.certificate, self.costs, self.layout
        ka = costs.absolute_step(k)
        lx, lxx = np.zeros(lay.n), np.zeros((lay.n, lay.n))
        for i in lay.agents:
            si = lay.state_slice(i)
            s = cert.own_scale(i, k)
            d = costs.own[i].terminal_derivatives(ka, x[si])
            lx[si] += s * d.lx
            lxx[si, si] += s * d.lxx
        self._add_pair_derivatives(k, x, lx, lxx)
        return TerminalDerivatives(lx, 0.5 * (lxx + lxx.T))

    def _add_pair_derivatives(
        self, k: int, x: DoubleMatrix, lx: DoubleMatrix, lxx: DoubleMatrix
    ) -> None:
        cert, costs, lay = self.certificate, self.costs, self.layout
        ka = costs.absolute_step(k)
        for i, j in costs.pairs():
            kernel = costs.pair_kernel(i, j)
            if kernel is None:
                continue
            si, sj = lay.state_slice(i), lay.state_slice(j)
            p = cert.pair_scale(i, j, k)
            ga, gb = kernel.gradient(ka, x[si], x[sj])
            haa, hab, hbb = kernel.hessian(ka, x[si], x[sj])
            lx[si] += p * ga
            lx[sj] += p * gb
            lxx[si, si] += p * haa
            lxx[si, sj] += p * hab
            lxx[sj, si] += p * hab.T
            lxx[sj, sj] += p * hbb

    # -- all stages at once --------------------------------------------------

    def _steps(self, T: int) -> tuple[StepArray, StepArray]:
        """Absolute steps for the kernels and indices into the scale arrays."""
        steps = np.arange(T)
        return steps + self.costs.time_offset, self.costs.coefficient_indices(steps)

    def stage_batch(self, states: DoubleMatrix, controls: DoubleMatrix) -> DoubleMatrix:
        cert, costs, lay = self.certificate, self.costs, self.layout
        absolute, idx = self._steps(len(controls))
        total = np.zeros(len(controls))
        for i in lay.agents:
            si, ci = lay.state_slice(i), lay.control_slice(i)
            own = costs.own[i].stage_batch(absolute, states[:, si], controls[:, ci])
            total += cert.own_scales[i, idx] * own
        for i, j in costs.pairs():
            kernel = costs.pair_kernel(i, j)
            if kernel is not None:
                xi, xj = states[:, lay.state_slice(i)], states[:, lay.state_slice(j)]
                total += cert.pair_scales[i, j, idx] * kernel.value_batch(absolute, xi, xj)
        return total

    def stage_derivatives_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> StageDerivatives:
        cert, costs, lay = self.certificate, self.costs, self.layout
        T = len(controls)
        absolute, idx = self._steps(T)
        lx, lu = np.zeros((T, lay.n)), np.zeros((T, lay.m))
        lxx, luu = np.zeros((T, lay.n, lay.n)), np.zeros((T, lay.m, lay.m))
        lux = np.zeros((T, lay.m, lay.n))
        for i in lay.agents:
            si, ci = lay.state_slice(i), lay.control_slice(i)
            s = cert.own_scales[i, idx][:, np.newaxis]
            d = costs.own[i].stage_derivatives_batch(absolute, states[:, si], controls[:, ci])
            lx[:, si] += s * d.lx
            lu[:, ci] += s * d.lu
            s3 = s[:, :, np.newaxis]
            lxx[:, si, si] += s3 * d.lxx
            luu[:, ci, ci] += s3 * d.luu
            lux[:, ci, si] += s3 * d.lux
        for i, j in costs.pairs():
            kernel = costs.pair_kernel(i, j)
            if kernel is None:
                continue
            si, sj = lay.state_slice(i), lay.state_slice(j)
            xi, xj = states[:, si], states[:, sj]
            p = cert.pair_scales[i, j, idx][:, np.newaxis]
            ga, gb = kernel.gradient_batch(absolute, xi, xj)
            haa, hab, hbb = kernel.hessian_batch(absolute, xi, xj)
            lx[:, si] += p * ga
            lx[:, sj] += p * gb
            p3 = p[:, :, np.newaxis]
            lxx[:, si, si] += p3 * haa
            lxx[:, si, sj] += p3 * hab
            lxx[:, sj, si] += p3 * hab.transpose(0, 2, 1)
            lxx[:, sj, sj] += p3 * hbb
        lxx = 0.5 * (lxx + lxx.transpose(0, 2, 1))
        luu = 0.5 * (luu + luu.transpose(0, 2, 1))
        return StageDerivatives(lx, lu, lxx, luu, lux)


class ScaledObjective:
    """alpha * objective; the set of minimizers is unchanged for alpha > 0."""

    def __init__(self, base: Any, alpha: float) -> None:
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        self.base = base
        self.alpha = float(alpha)

    def stage(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> float:
        return self.alpha * self.base.stage(k, x, u)

    def terminal(self, k: int, x: DoubleMatrix) -> float:
        return self.alpha * self.base.terminal(k, x)

    def stage_derivatives(self, k: int, x: DoubleMatrix, u: DoubleMatrix) -> StageDerivatives:
        d = self.base.stage_derivatives(k, x, u)
        a = self.alpha
        return StageDerivatives(a * d.lx, a * d.lu, a * d.lxx, a * d.luu, a * d.lux)

    def terminal_derivatives(self, k: int, x: DoubleMatrix) -> TerminalDerivatives:
        d = self.base.terminal_derivatives(k, x)
        return TerminalDerivatives(self.alpha * d.lx, self.alpha * d.lxx)

    def stage_batch(self, states: DoubleMatrix, controls: DoubleMatrix) -> DoubleMatrix:
        return self.alpha * stage_cost_batch(self.base, states, controls)

    def stage_derivatives_batch(
        self, states: DoubleMatrix, controls: DoubleMatrix
    ) -> StageDerivatives:
        d = stage_derivatives_batch(self.base, states, controls)
        a = self.alpha
        return StageDerivatives(a * d.lx, a * d.lu, a * d.lxx, a * d.luu, a * d.lux)


# ---------------------------------------------------------------------------
# Structure checks
# ---------------------------------------------------------------------------


def _symmetry_steps(costs: StructuredCost, horizon: Optional[int]) -> list[int]:
    if horizon is not None:
        return sorted({0, horizon // 2, horizon})
    return sorted({0, costs.coefficients.shape[2] - 1})


def check_kernel_symmetry(
    costs: StructuredCost,
    samples: Optional[int] = None,
    tol: Optional[float] = None,
    seed: int = 0,
    horizon: Optional[int] = None,
) -> float:
    """
    Statistical check of L^{ij}_k(a, b) = L^{ji}_k(b, a) on random state pairs.

    Kernels are black-box callables, so this is a probabilistic check: ``samples``
    random pairs per (i, j, step bucket). Returns the worst relative residual and
    raises ``AsymmetricKernelError`` when it exceeds ``tol``.
    """
    samples = settings.SYMMETRY_SAMPLES if samples is None else samples
    tol = settings.SYMMETRY_TOL if tol is None else tol
    lay = costs.layout
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_sample: dict[str, Any] = {}
    for i, j in costs.pairs():
        forward, backward = costs.kernel(i, j), costs.kernel(j, i)
        for k in _symmetry_steps(costs, horizon):
            ka = costs.absolute_step(k)
            for _ in range(samples):
                a = rng.normal(scale=settings.SYMMETRY_SAMPLE_SCALE, size=lay.state_dims[i])
                b = rng.normal(scale=settings.SYMMETRY_SAMPLE_SCALE, size=lay.state_dims[j])
                v_ij = 0.0 if forward is None else forward.value(ka, a, b)
                v_ji = 0.0 if backward is None else backward.value(ka, b, a)
                residual = abs(v_ij - v_ji) / max(1.0, abs(v_ij), abs(v_ji))
                if residual > worst:
                    worst = residual
                    worst_sample = {"pair": (i, j), "k": k, "a": a.tolist(), "b": b.tolist()}
    if worst > tol:
        raise AsymmetricKernelError(
            "Pairwise kernels are not symmetric", residual=worst, tol=tol, **worst_sample
        )
    return worst


def _require_agents(costs: StructuredCost, structure: PotentialStructure) -> None:
    if structure is PotentialStructure.DYADIC and costs.num_agents != 2:
        raise WrongStructureError(
            "The dyadic structure needs exactly two agents", num_agents=costs.num_agents
        )


def _check_uniform(costs: StructuredCost, outgoing: bool) -> None:
    """Exact equality check of c^{ij}_k = c^i_k (outgoing) or c^{ij}_k = c^j_k (incoming)."""
    c = costs.coefficients
    n_agents = costs.num_agents
    for a in range(n_agents):
        others = [b for b in range(n_agents) if b != a]
        if not others:
            continue
        ref = others[0]
        for b in others[1:]:
            for k in range(c.shape[2]):
                i, j = (a, b) if outgoing else (b, a)
                ri, rj = (a, ref) if outgoing else (ref, a)
                if c[i, j, k] != c[ri, rj, k]:
                    tag = "uniform_outgoing" if outgoing else "uniform_incoming"
                    raise WrongStructureError(
                        f"Coefficients violate the {tag} structure",
                        offending=(i, j, k),
                        value=float(c[i, j, k]),
                        expected=float(c[ri, rj, k]),
                    )


def _agent_coefficients(costs: StructuredCost, outgoing: bool) -> DoubleMatrix:
    """(N, K) array of c^i_k read off the coefficient tensor."""
    c = costs.coefficients
    n_agents = costs.num_agents
    out = np.ones((n_agents, c.shape[2]))
    if n_agents == 1:
        return out
    for a in range(n_agents):
        ref = 1 if a == 0 else 0
        out[a] = c[a, ref] if outgoing else c[ref, a]
    return out


def _build(
    structure: PotentialStructure,
    costs: StructuredCost,
    own_scales: DoubleMatrix,
    pair_scales: DoubleMatrix,
) -> PotentialCertificate:
    cert = PotentialCertificate(
        structure=structure,
        costs=costs,
        weights=1.0 / own_scales,
        own_scales=own_scales,
        pair_scales=pair_scales,
    )
    logger.info(
        "potential_certified",
        structure=structure.value,
        agents=costs.num_agents,
        weights=cert.weights[:, 0].tolist(),
        time_invariant=cert.time_invariant_weights,
    )
    return cert


def certify_dyadic(
    costs: StructuredCost,
    *,
    check_symmetry: bool = True,
    horizon: Optional[int] = None,
    seed: int = 0,
) -> PotentialCertificate:
    """Two-agent game: w^1 = 1/c^2, w^2 = 1/c^1 with c^1 = c^{12}, c^2 = c^{21}."""
    _require_agents(costs, PotentialStructure.DYADIC)
    if check_symmetry:
        check_kernel_symmetry(costs, seed=seed, horizon=horizon)
    c = costs.coefficients
    c1, c2 = c[0, 1], c[1, 0]
    own = np.stack([c2, c1])
    pair = np.ones((2, 2) + c1.shape)
    pair[0, 1] = pair[1, 0] = c1 * c2
    return _build(PotentialStructure.DYADIC, costs, own, pair)


def certify_uniform_outgoing(
    costs: StructuredCost,
    *,
    check_symmetry: bool = True,
    horizon: Optional[int] = None,
    seed: int = 0,
) -> PotentialCertificate:
    """c^{ij} = c^i: w^i = 1 / prod_{j != i} c^j."""
    _check_uniform(costs, outgoing=True)
    if check_symmetry:
        check_kernel_symmetry(costs, seed=seed, horizon=horizon)
    ci = _agent_coefficients(costs, outgoing=True)
    n_agents = costs.num_agents
    own = np.stack([np.prod(np.delete(ci, i, axis=0), axis=0) for i in range(n_agents)])
    total = np.prod(ci, axis=0)
    pair = np.broadcast_to(total, (n_agents, n_agents) + total.shape).copy()
    return _build(PotentialStructure.UNIFORM_OUTGOING, costs, own, pair)


def certify_uniform_incoming(
    costs: StructuredCost,
    *,
    check_symmetry: bool = True,
    horizon: Optional[int] = None,
    seed: int = 0,
) -> PotentialCertificate:
    """c^{ij} = c^j: w^i = 1 / c^i."""
    _check_uniform(costs, outgoing=False)
    if check_symmetry:
        check_kernel_symmetry(costs, seed=seed, horizon=horizon)
    ci = _agent_coefficients(costs, outgoing=False)
    pair = ci[:, np.newaxis, :] * ci[np.newaxis, :, :]
    return _build(PotentialStructure.UNIFORM_INCOMING, costs, ci.copy(), pair)


def certify_exact(
    costs: StructuredCost,
    *,
    check_symmetry: bool = True,
    horizon: Optional[int] = None,
    seed: int = 0,
) -> PotentialCertificate:
    """All coefficients 1: an exact potential game with unit weights."""
    c = costs.coefficients
    bad = np.argwhere(c != 1.0)
    if bad.size:
        i, j, k = (int(v) for v in bad[0])
        raise WrongStructureError(
            "Exact potential games need unit coefficients",
            offending=(i, j, k),
            value=float(c[i, j, k]),
        )
    if check_symmetry:
        check_kernel_symmetry(costs, seed=seed, horizon=horizon)
    n_agents, n_steps = costs.num_agents, c.shape[2]
    return _build(
        PotentialStructure.EXACT,
        costs,
        np.ones((n_agents, n_steps)),
        np.ones((n_agents, n_agents, n_steps)),
    )


_CERTIFIERS = {
    PotentialStructure.DYADIC: certify_dyadic,
    PotentialStructure.UNIFORM_OUTGOING: certify_uniform_outgoing,
    PotentialStructure.UNIFORM_INCOMING: certify_uniform_incoming,
    PotentialStructure.EXACT: certify_exact,
}


def detect_structure(costs: StructuredCost) -> PotentialStructure:
    """First structure that fits, in the order exact, dyadic, outgoing, incoming."""
    if np.all(costs.coefficients == 1.0):
        return PotentialStructure.EXACT
    if costs.num_agents == 2:
        return PotentialStructure.DYADIC
    try:
        _check_uniform(costs, outgoing=True)
        return PotentialStructure.UNIFORM_OUTGOING
    except WrongStructureError:
        pass
    try:
        _check_uniform(costs, outgoing=False)
        return PotentialStructure.UNIFORM_INCOMING
    except WrongStructureError as exc:
        # agents mixing both conventions are rejected rather than guessed
        raise WrongStructureError(
            "Coefficients follow none of the supported structures", **exc.detail
        ) from exc


def certify(
    costs: StructuredCost,
    structure: Union[PotentialStructure, str, None] = None,
    **kwargs: Any,
) -> PotentialCertificate:
    """Certify under ``structure``, or detect it when None."""
    resolved = detect_structure(costs) if structure is None else PotentialStructure(structure)
    return _CERTIFIERS[resolved](costs, **kwargs)


# ---------------------------------------------------------------------------
# Numerical verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of a numerical verification of the certificate."""

    name: str
    max_residual: float
    tol: float
    samples: int
    passed: bool
    worst: dict[str, Any] = field(default_factory=dict)


def _weighted_potential(
    objective: PotentialObjective, cert: PotentialCertificate, traj: Trajectory, i: AgentId
) -> float:
    T = traj.horizon
    total = sum(
        cert.weight(i, k) * objective.stage(k, traj.states[k], traj.controls[k]) for k in range(T)
    )
    return float(total + cert.weight(i, T) * objective.terminal(T, traj.states[-1]))


def decomposition_remainder(
    game: Game, cert: PotentialCertificate, traj: Trajectory, i: AgentId
) -> float:
    """J^i - (sum_k w^i_k L_k + w^i_T L_T); independent of agent i's own blocks."""
    return agent_cost(game, traj, i) - _weighted_potential(cert.potential, cert, traj, i)


def _project(u: DoubleMatrix, lower: DoubleMatrix, upper: DoubleMatrix) -> DoubleMatrix:
    return np.clip(u, lower, upper)


def _feasible_rollout(
    game: Game,
    make_controls: Callable[[np.random.Generator, float], DoubleMatrix],
    rng: np.random.Generator,
    lower: DoubleMatrix,
    upper: DoubleMatrix,
    what: str,
) -> Trajectory:
    scale = 1.0
    for _ in range(settings.VERIFY_MAX_RETRIES):
        controls = _project(make_controls(rng, scale), lower, upper)
        traj = rollout(game.dynamics, game.x0, controls)
        if feasibility_report(game, traj, tol=1e-9).feasible:
            return traj
        scale *= 0.5
    raise SamplingError(f"No feasible {what} found", retries=settings.VERIFY_MAX_RETRIES)


def verify_potential_property(
    game: Game,
    cert: PotentialCertificate,
    samples: Optional[int] = None,
    tol: Optional[float] = None,
    seed: int = 0,
) -> VerificationReport:
    """
    Check the weighted potential identity under random unilateral deviations:

        J^i(u) - J^i(u') = sum_k w^i_k (L_k - L'_k) + w^i_T (L_T - L'_T)

    where u' differs from u in agent i's controls only. Each sample draws from
    its own generator seeded by (seed, sample index).
    """
    samples = settings.VERIFY_SAMPLES if samples is None else samples
    tol = settings.VERIFY_TOL if tol is None else tol
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    cert.check_game(game)
    lay = game.layout
    objective = cert.potential
    lower, upper = game.constraints.control_box(lay.m)
    base_scale = settings.VERIFY_CONTROL_SCALE

    worst = 0.0
    worst_sample: dict[str, Any] = {}
    for s in range(samples):
        rng = np.random.default_rng([seed, s])
        i = int(rng.integers(lay.num_agents))
        ci = lay.control_slice(i)

        def base_controls(g: np.random.Generator, scale: float) -> DoubleMatrix:
            return g.normal(scale=base_scale * scale, size=(game.horizon, lay.m))

        base = _feasible_rollout(game, base_controls, rng, lower, upper, "base controls")

        def deviated_controls(g: np.random.Generator, scale: float) -> DoubleMatrix:
            u = np.array(base.controls)
            ui = u[:, ci]
            sigma = 0.1 * (1.0 + np.linalg.norm(ui, axis=1, keepdims=True)) * scale
            u[:, ci] = ui + g.normal(size=ui.shape) * sigma
            return u

        deviated = _feasible_rollout(game, deviated_controls, rng, lower, upper, "deviation")

        d_cost = agent_cost(game, base, i) - agent_cost(game, deviated, i)
        d_pot = _weighted_potential(objective, cert, base, i) - _weighted_potential(
            objective, cert, deviated, i
        )
        residual = abs(d_cost - d_pot)
        if residual > worst:
            worst = residual
            worst_sample = {"sample": s, "agent": i, "cost_change": d_cost}

    report = VerificationReport(
        "potential_property", worst, tol, samples, worst <= tol, worst_sample
    )
    logger.info(
        "potential_property_verified",
        residual=worst,
        tol=tol,
        samples=samples,
        passed=report.passed,
    )
    return report


def verify_derivative_conditions(
    game: Game,
    cert: PotentialCertificate,
    samples: Optional[int] = None,
    tol: Optional[float] = None,
    seed: int = 0,
    method: str = "finite_difference",
) -> VerificationReport:
    """
    Check dL^i_k/d(x^i, u^i) = w^i_k dL_k/d(x^i, u^i) and the terminal analogue
    at random points. ``method`` is "finite_difference" or "analytic".
    """
    samples = settings.VERIFY_SAMPLES if samples is None else samples
    tol = 1e-6 if tol is None else tol
    if method not in ("finite_difference", "analytic"):
        raise ValueError(f"Unknown derivative method {method!r}")
    cert.check_game(game)
    lay = game.layout
    costs = game.costs
    objective = cert.potential
    n = lay.n

    def stage_grads(i: AgentId, k: int, x: DoubleMatrix, u: DoubleMatrix) -> tuple[Any, Any]:
        if method == "analytic":
            gx, gu = costs.agent_stage_gradient(i, k, x, u)
            pd = objective.stage_derivatives(k, x, u)
            return np.r_[gx, gu], np.r_[pd.lx, pd.lu]
        z = np.r_[x, u]
        agent = central_gradient(lambda v: costs.agent_stage(i, k, v[:n], v[n:]), z)
        pot = central_gradient(lambda v: objective.stage(k, v[:n], v[n:]), z)
        return agent, pot

    def terminal_grads(i: AgentId, k: int, x: DoubleMatrix) -> tuple[Any, Any]:
        if method == "analytic":
            return costs.agent_terminal_gradient(i, k, x), objective.terminal_derivatives(k, x).lx
        agent = central_gradient(lambda v: costs.agent_terminal(i, k, v), x)
        pot = central_gradient(lambda v: objective.terminal(k, v), x)
        return agent, pot

    worst = 0.0
    worst_sample: dict[str, Any] = {}
    T = game.horizon
    for s in range(samples):
        rng = np.random.default_rng([seed, s])
        k = int(rng.integers(T))
        x = rng.normal(size=n)
        u = rng.normal(size=lay.m)
        for i in lay.agents:
            block = np.r_[
                np.arange(n)[lay.state_slice(i)], n + np.arange(lay.m)[lay.control_slice(i)]
            ]
            agent, pot = stage_grads(i, k, x, u)
            gap = agent[block] - cert.weight(i, k) * pot[block]
            residual = float(np.max(np.abs(gap), initial=0.0))
            agent_t, pot_t = terminal_grads(i, T, x)
            si = lay.state_slice(i)
            residual_t = float(
                np.max(np.abs(agent_t[si] - cert.weight(i, T) * pot_t[si]), initial=0.0)
            )
            for value, step in ((residual, k), (residual_t, T)):
                if value > worst:
                    worst = value
                    worst_sample = {"sample": s, "agent": i, "k": step}

    report = VerificationReport(
        "derivative_conditions", worst, tol, samples, worst <= tol, worst_sample
    )
    logger.info(
        "derivative_conditions_verified",
        residual=worst,
        tol=tol,
        method=method,
        passed=report.passed,
    )
    return report


def certify_game(
    game: Game,
    structure: Union[PotentialStructure, str, None] = None,
    seed: int = 0,
) -> PotentialCertificate:
    """Certify ``game.costs``, bucketing the symmetry check over the game's horizon."""
    return certify(game.costs, structure, horizon=game.horizon, seed=seed)


def weights_table(cert: PotentialCertificate, steps: Sequence[int]) -> list[list[float]]:
    """Rows of w^i_k for each agent over ``steps``."""
    return [[cert.weight(i, k) for k in steps] for i in range(cert.num_agents)]

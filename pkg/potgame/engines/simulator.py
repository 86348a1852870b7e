"""
Simulator - receding-horizon execution, run metrics and Monte-Carlo benchmarking.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from potgame.config import settings
from potgame.engines.auglag import al_solve, constraint_values, max_violation
from potgame.engines.game import DoubleMatrix, Game, Trajectory
from potgame.engines.potential import PotentialCertificate
from potgame.engines.scenarios import ScenarioSpec, build_game, certify_scenario
from potgame.engines.solution import SolverOptions, TraceSink
from potgame.errors import PotGameError, RecedingHorizonAbort
from potgame.utils.logger import get_logger

logger = get_logger(__name__)

# Executed prefixes must satisfy the constraints to this tolerance
EXECUTION_FEASIBILITY_TOL = 1e-4
REFERENCE_SOLVE_TIME_MS = 26.15
HISTOGRAM_BINS = 30

_TIMING_FIELDS = {"solve_time_ms_mean", "solve_time_ms_std", "solve_time_ms_max"}


class RecedingHorizonConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    plan: int = Field(ge=1, description="Planning horizon in steps")
    execute: int = Field(default=1, ge=1, description="Steps executed per replan")
    total: int = Field(ge=1, description="Total simulated steps")
    warm_start: bool = True

    @model_validator(mode="after")
    def _execute_within_plan(self) -> "RecedingHorizonConfig":
        if self.execute > self.plan:
            raise ValueError("execute must not exceed the planning horizon")
        return self


class RunMetrics(BaseModel):
    """Distances in metres, times in milliseconds (solver iterations only)."""

    min_pairwise_distance: Optional[float] = Field(default=None, ge=0)
    goal_errors: list[float] = Field(default_factory=list)
    max_path_deviation: list[float] = Field(default_factory=list)
    solve_time_ms_mean: float = 0.0
    solve_time_ms_std: float = 0.0
    solve_time_ms_max: float = 0.0
    solves: int = 0
    unconverged_solves: int = 0
    iterations: list[int] = Field(default_factory=list)
    max_violation: float = 0.0

    def deterministic_view(self) -> dict[str, Any]:
        return self.model_dump(exclude=_TIMING_FIELDS)


def _positions(game: Game, traj: Trajectory) -> DoubleMatrix:
    """(N, T+1, 2) planar positions."""
    lay = game.layout
    return np.stack([traj.agent_states(lay, i)[:, :2] for i in lay.agents])


def _segment_distance(points: DoubleMatrix, a: DoubleMatrix, b: DoubleMatrix) -> DoubleMatrix:
    ab = b - a
    length_sq = float(ab @ ab)
    if length_sq == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / length_sq, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, np.newaxis] * ab), axis=1)


def trajectory_violation(game: Game, traj: Trajectory) -> float:
    """Max constraint violation along ``traj``, whatever its length."""
    g, g_terminal = constraint_values(game.constraints, traj)
    return max_violation(game.constraints, g, g_terminal)


def compute_run_metrics(
    game: Game,
    traj: Trajectory,
    solve_times_ms: Optional[list[float]] = None,
    iterations: Optional[list[int]] = None,
    unconverged_solves: int = 0,
) -> RunMetrics:
    pos = _positions(game, traj)
    N = pos.shape[0]
    min_distance: Optional[float] = None
    if N >= 2:
        min_distance = min(
            float(np.min(np.linalg.norm(pos[i] - pos[j], axis=1)))
            for i in range(N)
            for j in range(i + 1, N)
        )
    goal_errors: list[float] = []
    deviations: list[float] = []
    if game.goals is not None:
        lay = game.layout
        for i in lay.agents:
            goal = game.goals[lay.state_slice(i)][:2]
            goal_errors.append(float(np.linalg.norm(pos[i, -1] - goal)))
            deviations.append(float(np.max(_segment_distance(pos[i], pos[i, 0], goal))))
    times = np.asarray(solve_times_ms or [], dtype=np.float64)
    return RunMetrics(
        min_pairwise_distance=min_distance,
        goal_errors=goal_errors,
        max_path_deviation=deviations,
        solve_time_ms_mean=float(times.mean()) if times.size else 0.0,
        solve_time_ms_std=float(times.std()) if times.size else 0.0,
        solve_time_ms_max=float(times.max()) if times.size else 0.0,
        solves=int(times.size),
        unconverged_solves=unconverged_solves,
        iterations=list(iterations or []),
        max_violation=trajectory_violation(game, traj),
    )


def shift_controls(controls: DoubleMatrix, steps: int) -> DoubleMatrix:
    """Drop the first ``steps`` controls and repeat the last one to keep the length."""
    controls = np.asarray(controls, dtype=np.float64)
    tail = np.repeat(controls[-1:], steps, axis=0)
    return np.concatenate([controls[steps:], tail])[: controls.shape[0]]


def run_receding_horizon(
    game: Game,
    cert: PotentialCertificate,
    cfg: RecedingHorizonConfig,
    opts: Optional[SolverOptions] = None,
    trace: Optional[TraceSink] = None,
) -> tuple[Trajectory, RunMetrics]:
    """
    Closed-loop execution: solve over ``cfg.plan`` steps from the current state,
    apply the first ``cfg.execute`` controls through the true dynamics, repeat
    until ``cfg.total`` steps have been executed.
    """
    if game.horizon < cfg.plan:
        raise ValueError(f"Game horizon {game.horizon} is shorter than the plan {cfg.plan}")
    opts = opts or SolverOptions()
    x = np.array(game.x0)
    states = [x]
    controls: list[DoubleMatrix] = []
    warm: Optional[DoubleMatrix] = None
    times: list[float] = []
    iterations: list[int] = []
    unconverged = 0
    step = 0
    replan = 0

    def partial() -> Optional[Trajectory]:
        if not controls:
            return None
        return Trajectory(np.array(states), np.array(controls), game.dt)

    while step < cfg.total:
        window = game.window(step, cfg.plan, x)
        u_init = warm if cfg.warm_start and warm is not None else window.zero_controls()
        started = time.perf_counter()
        try:
            sol = al_solve(window, cert.window(step), u_init, opts, trace)
        except PotGameError as exc:
            logger.warning("receding_horizon_abort", replan=replan, step=step, error=str(exc))
            raise RecedingHorizonAbort(
                "Inner solve failed", partial=partial(), failure_index=replan, step=step
            ) from exc
        times.append((time.perf_counter() - started) * 1000.0)
        iterations.append(sol.iterations)
        if sol.max_violation > EXECUTION_FEASIBILITY_TOL:
            raise RecedingHorizonAbort(
                "Inner solve returned an infeasible plan",
                partial=partial(),
                failure_index=replan,
                step=step,
                violation=sol.max_violation,
            )
        if not sol.converged:
            unconverged += 1
            logger.warning("receding_horizon_unconverged", replan=replan, status=sol.status.value)

        executed = min(cfg.execute, cfg.total - step)
        for j in range(executed):
            u = sol.trajectory.controls[j]
            x = game.dynamics.step(x, u, step + j)
            controls.append(np.array(u))
            states.append(x)
        warm = shift_controls(sol.trajectory.controls, executed)
        step += executed
        replan += 1

    traj = Trajectory(np.array(states), np.array(controls), game.dt)
    metrics = compute_run_metrics(game, traj, times, iterations, unconverged)
    logger.info(
        "receding_horizon_finished",
        replans=replan,
        steps=cfg.total,
        min_distance=metrics.min_pairwise_distance,
        max_violation=metrics.max_violation,
    )
    return traj, metrics


# ---------------------------------------------------------------------------
# Monte-Carlo benchmark
# ---------------------------------------------------------------------------


class RunRecord(BaseModel):
    index: int
    success: bool
    converged: bool = False
    feasible: bool = False
    status: Optional[str] = None
    cost: Optional[float] = None
    iterations: int = 0
    solve_time_ms: Optional[float] = None
    metrics: Optional[RunMetrics] = None
    error: Optional[str] = None

    def deterministic_view(self) -> dict[str, Any]:
        data = self.model_dump(exclude={"solve_time_ms", "metrics"})
        data["metrics"] = None if self.metrics is None else self.metrics.deterministic_view()
        return data


class Histogram(BaseModel):
    edges: list[float]
    counts: list[int]


class BenchmarkReport(BaseModel):
    """Single open-loop solve per run; timings are wall-clock and machine dependent."""

    scenario: str
    n: int
    radius: float
    seed: int
    runs: list[RunRecord]
    success_rate: float
    solve_time_ms_mean: float
    solve_time_ms_std: float
    solve_time_ms_max: float
    histogram: Histogram
    reference_solve_time_ms: float = REFERENCE_SOLVE_TIME_MS

    @property
    def successes(self) -> int:
        return sum(1 for run in self.runs if run.success)

    def deterministic_view(self) -> dict[str, Any]:
        data = self.model_dump(exclude=_TIMING_FIELDS | {"runs", "histogram"})
        data["runs"] = [run.deterministic_view() for run in self.runs]
        return data


def disc_offsets(n: int, num_agents: int, radius: float, seed: int) -> DoubleMatrix:
    """(n, N, 2) position offsets, uniform in a disc of ``radius``."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.uniform(size=(n, num_agents)))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(n, num_agents))
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


@dataclass(frozen=True)
class _RunTask:
    index: int
    spec: ScenarioSpec
    opts: SolverOptions


def _run_once(task: _RunTask) -> RunRecord:
    try:
        game = build_game(task.spec)
        cert = certify_scenario(task.spec, game)
        started = time.perf_counter()
        sol = al_solve(game, cert, None, task.opts)
        elapsed = (time.perf_counter() - started) * 1000.0
    except PotGameError as exc:
        return RunRecord(index=task.index, success=False, error=str(exc))
    metrics = compute_run_metrics(game, sol.trajectory, [elapsed], [sol.iterations])
    feasible = metrics.max_violation <= EXECUTION_FEASIBILITY_TOL
    return RunRecord(
        index=task.index,
        success=sol.converged and feasible,
        converged=sol.converged,
        feasible=feasible,
        status=sol.status.value,
        cost=sol.cost,
        iterations=sol.iterations,
        solve_time_ms=elapsed,
        metrics=metrics,
    )


def solve_time_histogram(times: list[float], bins: int = HISTOGRAM_BINS) -> Histogram:
    """``bins`` equal bins over [0, max(times)]."""
    if not times:
        return Histogram(edges=[0.0] * (bins + 1), counts=[0] * bins)
    counts, edges = np.histogram(times, bins=bins, range=(0.0, max(times)))
    return Histogram(edges=[float(e) for e in edges], counts=[int(c) for c in counts])


def monte_carlo_benchmark(
    spec: ScenarioSpec,
    n: int,
    radius: float,
    seed: int = 0,
    opts: Optional[SolverOptions] = None,
    workers: Optional[int] = None,
) -> BenchmarkReport:
    """
    ``n`` open-loop solves from start positions jittered uniformly in a disc.

    Offsets are drawn up front from ``seed``, so results do not depend on the
    worker count. Failed runs are recorded, not raised.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}")
    opts = opts or spec.solver_options()
    workers = settings.WORKERS if workers is None else workers
    offsets = disc_offsets(n, spec.num_agents, radius, seed)
    tasks = []
    for index in range(n):
        starts = [list(agent.start) for agent in spec.agents]
        for i, start in enumerate(starts):
            start[0] += float(offsets[index, i, 0])
            start[1] += float(offsets[index, i, 1])
        tasks.append(_RunTask(index, spec.with_starts(starts), opts))

    logger.info("benchmark_started", scenario=spec.name, runs=n, radius=radius, workers=workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_once, tasks))
    else:
        records = [_run_once(task) for task in tasks]
    records.sort(key=lambda record: record.index)

    ok_times = [r.solve_time_ms for r in records if r.success and r.solve_time_ms is not None]
    all_times = np.array([r.solve_time_ms for r in records if r.solve_time_ms is not None])
    report = BenchmarkReport(
        scenario=spec.name,
        n=n,
        radius=radius,
        seed=seed,
        runs=records,
        success_rate=sum(r.success for r in records) / n,
        solve_time_ms_mean=float(all_times.mean()) if all_times.size else 0.0,
        solve_time_ms_std=float(all_times.std()) if all_times.size else 0.0,
        solve_time_ms_max=float(all_times.max()) if all_times.size else 0.0,
        histogram=solve_time_histogram(ok_times),
    )
    logger.info(
        "benchmark_finished",
        scenario=spec.name,
        success_rate=report.success_rate,
        mean_solve_time_ms=report.solve_time_ms_mean,
        reference_ms=REFERENCE_SOLVE_TIME_MS,
    )
    return report

"""
Solve Command

Solves a certified scenario open-loop, or closed-loop with ``--receding``, and
writes the trajectory table, a metrics report and optionally the iteration trace.
"""

import argparse
import contextlib
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel

from potgame.cli.export import TraceWriter, write_json, write_trajectory
from potgame.cli.scenario_file import resolve_scenario
from potgame.engines.auglag import al_solve
from potgame.engines.game import Game, Trajectory
from potgame.engines.scenarios import ScenarioSpec, build_game, certify_scenario
from potgame.engines.simulator import (
    EXECUTION_FEASIBILITY_TOL,
    RecedingHorizonConfig,
    RunMetrics,
    compute_run_metrics,
    run_receding_horizon,
)
from potgame.engines.solution import SolverOptions, TraceSink
from potgame.errors import EXIT_OK, EXIT_SOLVER_FAILURE, RecedingHorizonAbort, SolverFailure
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


class SolveReport(BaseModel):
    """Contents of ``metrics.json``."""

    scenario: str
    mode: str
    status: str
    converged: bool
    feasible: bool
    failed: bool
    cost: Optional[float] = None
    iterations: int = 0
    outer_iterations: int = 0
    error: Optional[str] = None
    failure_index: Optional[int] = None
    metrics: Optional[RunMetrics] = None


def register(subparsers: Any) -> None:
    parser = subparsers.add_parser("solve", help="compute a generalized Nash equilibrium")
    parser.add_argument("scenario", help="scenario file or built-in scenario name")
    parser.add_argument("--output", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="certification sampling seed")
    parser.add_argument("--receding", action="store_true", help="closed-loop execution")
    parser.add_argument("--plan", type=int, help="receding planning horizon in steps")
    parser.add_argument("--execute", type=int, default=1, help="steps executed per replan")
    parser.add_argument("--cold-start", action="store_true", help="disable warm starts")
    parser.add_argument("--trace", action="store_true", help="write trace.jsonl")
    parser.add_argument("--tol", type=float, help="gradient and constraint tolerance")
    parser.set_defaults(handler=handle)


def solver_options(spec: ScenarioSpec, tol: Optional[float]) -> SolverOptions:
    return spec.solver_options(gradient_tol=tol, constraint_tol=tol)


def _open_loop(
    game: Game, spec: ScenarioSpec, args: argparse.Namespace, trace: Optional[TraceSink]
) -> tuple[Optional[Trajectory], SolveReport]:
    cert = certify_scenario(spec, game, seed=args.seed)
    try:
        sol = al_solve(game, cert, None, solver_options(spec, args.tol), trace)
    except SolverFailure as exc:
        best = exc.best
        report = SolveReport(
            scenario=spec.name,
            mode="open_loop",
            status="failed",
            converged=False,
            feasible=False,
            failed=True,
            error=str(exc),
        )
        if best is None:
            return None, report
        report.metrics = compute_run_metrics(game, best.trajectory, None, [best.iterations])
        report.cost = best.cost
        report.iterations = best.iterations
        return best.trajectory, report

    metrics = compute_run_metrics(game, sol.trajectory, None, [sol.iterations])
    feasible = metrics.max_violation <= EXECUTION_FEASIBILITY_TOL
    report = SolveReport(
        scenario=spec.name,
        mode="open_loop",
        status=sol.status.value,
        converged=sol.converged,
        feasible=feasible,
        failed=not (sol.converged and feasible),
        cost=sol.cost,
        iterations=sol.iterations,
        outer_iterations=sol.outer_iterations,
        metrics=metrics,
    )
    return sol.trajectory, report


def _receding(
    game: Game, spec: ScenarioSpec, args: argparse.Namespace, trace: Optional[TraceSink]
) -> tuple[Optional[Trajectory], SolveReport]:
    cert = certify_scenario(spec, game, seed=args.seed)
    plan = game.horizon if args.plan is None else args.plan
    cfg = RecedingHorizonConfig(
        plan=plan, execute=args.execute, total=game.horizon, warm_start=not args.cold_start
    )
    try:
        traj, metrics = run_receding_horizon(
            game, cert, cfg, solver_options(spec, args.tol), trace
        )
    except RecedingHorizonAbort as exc:
        report = SolveReport(
            scenario=spec.name,
            mode="receding",
            status="aborted",
            converged=False,
            feasible=False,
            failed=True,
            error=str(exc),
            failure_index=exc.failure_index,
        )
        return exc.partial, report
    feasible = metrics.max_violation <= EXECUTION_FEASIBILITY_TOL
    report = SolveReport(
        scenario=spec.name,
        mode="receding",
        status="completed",
        converged=metrics.unconverged_solves == 0,
        feasible=feasible,
        failed=not feasible,
        iterations=sum(metrics.iterations),
        metrics=metrics,
    )
    return traj, report


def handle(args: argparse.Namespace) -> int:
    spec = resolve_scenario(args.scenario)
    game = build_game(spec)
    out: Path = args.output
    out.mkdir(parents=True, exist_ok=True)

    run = _receding if args.receding else _open_loop
    with contextlib.ExitStack() as stack:
        trace = stack.enter_context(TraceWriter(out / "trace.jsonl")) if args.trace else None
        traj, report = run(game, spec, args, trace)

    if traj is not None:
        write_trajectory(out / "trajectory.csv", game.layout, traj)
    write_json(out / "metrics.json", report)

    if report.metrics is not None:
        m = report.metrics
        print(
            f"{spec.name}: {report.status}, cost={report.cost}, "
            f"min_distance={m.min_pairwise_distance}, max_violation={m.max_violation:.3e}"
        )
    else:
        print(f"{spec.name}: {report.status}, {report.error}")
    logger.info(
        "cli_solve_finished", scenario=spec.name, status=report.status, failed=report.failed
    )
    return EXIT_SOLVER_FAILURE if report.failed else EXIT_OK

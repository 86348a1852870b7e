"""
Bench Command

Monte-Carlo benchmark over jittered start positions. Writes the per-run table,
the aggregate report and the solve-time histogram.
"""

import argparse
from pathlib import Path
from typing import Any

from potgame.cli.export import write_histogram, write_json, write_table
from potgame.cli.scenario_file import resolve_scenario
from potgame.cli.solve import solver_options
from potgame.engines.simulator import BenchmarkReport, monte_carlo_benchmark
from potgame.errors import EXIT_OK, EXIT_SOLVER_FAILURE
from potgame.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_RUNS = 200
DEFAULT_RADIUS = 0.2

RUN_COLUMNS = [
    "index",
    "success",
    "converged",
    "feasible",
    "status",
    "cost",
    "iterations",
    "solve_time_ms",
    "min_pairwise_distance",
    "max_violation",
    "error",
]


def register(subparsers: Any) -> None:
    parser = subparsers.add_parser("bench", help="Monte-Carlo solve-time benchmark")
    parser.add_argument("scenario", help="scenario file or built-in scenario name")
    parser.add_argument("--output", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--n", type=int, default=DEFAULT_RUNS, help="number of runs")
    parser.add_argument("--seed", type=int, default=0, help="jitter seed")
    parser.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="jitter radius (m)")
    parser.add_argument("--workers", type=int, help="worker processes (POTGAME_WORKERS)")
    parser.add_argument("--tol", type=float, help="gradient and constraint tolerance")
    parser.set_defaults(handler=handle)


def run_rows(report: BenchmarkReport) -> list[list[Any]]:
    rows = []
    for run in report.runs:
        metrics = run.metrics
        rows.append(
            [
                run.index,
                int(run.success),
                int(run.converged),
                int(run.feasible),
                run.status or "",
                run.cost,
                run.iterations,
                run.solve_time_ms,
                None if metrics is None else metrics.min_pairwise_distance,
                None if metrics is None else metrics.max_violation,
                run.error or "",
            ]
        )
    return rows


def handle(args: argparse.Namespace) -> int:
    spec = resolve_scenario(args.scenario)
    out: Path = args.output
    out.mkdir(parents=True, exist_ok=True)

    report = monte_carlo_benchmark(
        spec, args.n, args.radius, args.seed, solver_options(spec, args.tol), args.workers
    )
    write_table(out / "runs.csv", RUN_COLUMNS, run_rows(report))
    write_json(out / "report.json", report.model_dump(mode="json", exclude={"runs"}))
    write_histogram(out / "histogram.csv", report.histogram)

    print(
        f"{spec.name}: success_rate={report.success_rate:.3f} "
        f"mean_solve_time_ms={report.solve_time_ms_mean:.2f} "
        f"(reference {report.reference_solve_time_ms} ms, single open-loop solves)"
    )
    logger.info("cli_bench_finished", scenario=spec.name, runs=args.n, successes=report.successes)
    return EXIT_OK if report.successes > 0 else EXIT_SOLVER_FAILURE

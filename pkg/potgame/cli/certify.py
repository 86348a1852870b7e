"""
Certify Command

Certifies a scenario's coupling structure, prints the weights and checks the
weighted potential property numerically.
"""

import argparse
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from potgame.cli.export import format_number, write_json
from potgame.cli.scenario_file import resolve_scenario
from potgame.engines.potential import (
    VerificationReport,
    verify_derivative_conditions,
    verify_potential_property,
    weights_table,
)
from potgame.engines.scenarios import build_game, certify_scenario
from potgame.errors import EXIT_CERTIFICATION_FAILURE, EXIT_OK
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


class CertificateSummary(BaseModel):
    """Certificate as written to ``certificate.json``."""

    scenario: str
    structure: str
    time_invariant_weights: bool
    steps: list[int]
    weights: list[list[float]]
    verification: list[dict[str, Any]]
    certified: bool


def register(subparsers: Any) -> None:
    parser = subparsers.add_parser("certify", help="certify a scenario as a potential game")
    parser.add_argument("scenario", help="scenario file or built-in scenario name")
    parser.add_argument("--output", type=Path, help="directory for certificate.json")
    parser.add_argument("--seed", type=int, default=0, help="verification sampling seed")
    parser.add_argument("--n", type=int, help="verification samples")
    parser.add_argument("--tol", type=float, help="potential-property tolerance")
    parser.set_defaults(handler=handle)


def _verification_line(report: VerificationReport) -> str:
    status = "ok" if report.passed else "FAILED"
    return (
        f"  {report.name}: residual={report.max_residual:.3e} "
        f"tol={report.tol:.1e} samples={report.samples} {status}"
    )


def _weights_text(table: list[list[float]]) -> str:
    """Agent weights at k = 0, or one tuple per step when they vary in time."""
    values = {w for row in table for w in row}
    if len(values) == 1:
        return "weights all " + format_number(values.pop(), trim="-")
    per_step = [
        "(" + ", ".join(format_number(w, trim="-") for w in column) + ")"
        for column in zip(*table)
    ]
    return "weights " + " ".join(per_step)


def handle(args: argparse.Namespace) -> int:
    spec = resolve_scenario(args.scenario)
    game = build_game(spec)
    cert = certify_scenario(spec, game, seed=args.seed)

    reports = [
        verify_potential_property(game, cert, args.n, args.tol, args.seed),
        verify_derivative_conditions(game, cert, args.n, None, args.seed),
    ]
    steps = [0] if cert.time_invariant_weights else list(range(game.horizon + 1))
    table = weights_table(cert, steps)
    certified = all(report.passed for report in reports)

    print(f"{spec.name}: {cert.structure.value}, {_weights_text(table)}")
    for report in reports:
        print(_verification_line(report))

    if args.output is not None:
        args.output.mkdir(parents=True, exist_ok=True)
        summary = CertificateSummary(
            scenario=spec.name,
            structure=cert.structure.value,
            time_invariant_weights=cert.time_invariant_weights,
            steps=steps,
            weights=table,
            verification=[
                {
                    "name": r.name,
                    "max_residual": r.max_residual,
                    "tol": r.tol,
                    "samples": r.samples,
                    "passed": r.passed,
                }
                for r in reports
            ],
            certified=certified,
        )
        write_json(args.output / "certificate.json", summary)

    logger.info("cli_certify_finished", scenario=spec.name, certified=certified)
    return EXIT_OK if certified else EXIT_CERTIFICATION_FAILURE

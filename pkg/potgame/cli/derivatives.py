"""
Check-Derivatives Command

Compares the analytic derivatives of a scenario's dynamics, potential and
constraints with central finite differences.
"""

import argparse
from typing import Any

from potgame.cli.scenario_file import resolve_scenario
from potgame.config import settings
from potgame.engines.derivatives import derivative_check
from potgame.engines.scenarios import build_game, certify_scenario
from potgame.errors import EXIT_CERTIFICATION_FAILURE, EXIT_OK
from potgame.utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers: Any) -> None:
    parser = subparsers.add_parser(
        "check-derivatives", help="finite-difference check of analytic derivatives"
    )
    parser.add_argument("scenario", help="scenario file or built-in scenario name")
    parser.add_argument("--n", type=int, default=10, help="sample points per target")
    parser.add_argument("--seed", type=int, default=0, help="sampling seed")
    parser.add_argument("--tol", type=float, help="maximum relative error")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    tol = settings.DERIVATIVE_CHECK_TOL if args.tol is None else args.tol
    spec = resolve_scenario(args.scenario)
    game = build_game(spec)
    cert = certify_scenario(spec, game, seed=args.seed)
    lay = game.layout

    errors = {
        "dynamics": derivative_check(game.dynamics, args.n, args.seed),
        "potential": derivative_check(
            cert.potential, args.n, args.seed, n=lay.n, m=lay.m, horizon=game.horizon
        ),
    }
    if not game.constraints.is_empty:
        errors["constraints"] = derivative_check(
            game.constraints, args.n, args.seed, n=lay.n, m=lay.m
        )

    for target, error in errors.items():
        print(f"  {target}: max_relative_error={error:.3e} {'ok' if error <= tol else 'FAILED'}")
    passed = all(error <= tol for error in errors.values())
    logger.info("cli_check_derivatives_finished", scenario=spec.name, passed=passed, **errors)
    return EXIT_OK if passed else EXIT_CERTIFICATION_FAILURE

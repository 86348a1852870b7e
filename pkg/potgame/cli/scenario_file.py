"""
Scenario Files - JSON documents validated against ``ScenarioSpec``.
"""

import json
from pathlib import Path
from typing import Callable, Union

from pydantic import ValidationError

from potgame.engines.scenarios import (
    ScenarioSpec,
    double_integrator_lq_spec,
    four_agent_swap_spec,
    three_agent_asymmetric_spec,
)
from potgame.errors import PotGameError, ScenarioParseError, ScenarioSchemaError
from potgame.utils.logger import get_logger

logger = get_logger(__name__)

BUILTIN_SCENARIOS: dict[str, Callable[[], ScenarioSpec]] = {
    "four_agent_swap": four_agent_swap_spec,
    "three_agent_asymmetric": three_agent_asymmetric_spec,
    "double_integrator_lq": double_integrator_lq_spec,
}


def parse_scenario(text: str) -> ScenarioSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    try:
        return ScenarioSpec.model_validate(data)
    except ValidationError as exc:
        errors = [
            {"location": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        raise ScenarioSchemaError("Scenario does not match the schema", errors=errors) from exc


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PotGameError("Cannot read scenario file", path=str(path), reason=exc.strerror)
    spec = parse_scenario(text)
    logger.debug("scenario_loaded", path=str(path), name=spec.name, agents=spec.num_agents)
    return spec


def dump_scenario(spec: ScenarioSpec) -> str:
    return spec.model_dump_json(indent=2, exclude_none=True) + "\n"


def save_scenario(spec: ScenarioSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_scenario(spec), encoding="utf-8")


def resolve_scenario(source: Union[str, Path]) -> ScenarioSpec:
    """Load ``source`` as a file, falling back to the built-in scenario of that name."""
    path = Path(source)
    if not path.exists() and str(source) in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[str(source)]()
    return load_scenario(path)

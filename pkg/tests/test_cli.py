"""
Integration tests for the potgame command line.
"""

import csv
import json
from pathlib import Path

import pytest

from potgame.cli.export import format_number, trajectory_rows
from potgame.cli.scenario_file import (
    BUILTIN_SCENARIOS,
    dump_scenario,
    load_scenario,
    parse_scenario,
    resolve_scenario,
    save_scenario,
)
from potgame.engines.game import AgentLayout, Trajectory
from potgame.errors import PotGameError, ScenarioParseError, ScenarioSchemaError
from potgame.main import main

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

AGENT = {"start": [0.0, 0.0, 0.0, 0.0], "goal": [1.0, 0.0, 0.0, 0.0]}


def write_scenario(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestScenarioFiles:
    """Test suite for scenario parsing and the shipped files."""

    def test_parse_error_position(self) -> None:
        """Malformed JSON reports the line and column."""
        with pytest.raises(ScenarioParseError) as exc:
            parse_scenario('{\n  "name": }')
        assert exc.value.line == 2
        assert exc.value.exit_code == 2

    def test_schema_error_locations(self) -> None:
        """Schema violations list the offending fields."""
        with pytest.raises(ScenarioSchemaError) as exc:
            parse_scenario(json.dumps({"agents": [AGENT]}))
        locations = [err["location"] for err in exc.value.detail["errors"]]
        assert "horizon" in locations

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(PotGameError) as exc:
            load_scenario(tmp_path / "absent.json")
        assert exc.value.exit_code == 2

    @pytest.mark.parametrize("name", sorted(BUILTIN_SCENARIOS))
    def test_round_trip(self, name: str) -> None:
        """Dumping and re-parsing a built-in scenario gives the same spec."""
        spec = BUILTIN_SCENARIOS[name]()

        assert parse_scenario(dump_scenario(spec)) == spec

    @pytest.mark.parametrize("name", sorted(BUILTIN_SCENARIOS))
    def test_shipped_files(self, name: str) -> None:
        """The files under scenarios/ describe the built-in scenarios."""
        spec = load_scenario(SCENARIO_DIR / f"{name}.json")
        builtin = BUILTIN_SCENARIOS[name]()

        assert spec.name == name
        assert spec.num_agents == builtin.num_agents
        assert spec.horizon.steps == builtin.horizon.steps
        assert spec.coupling.structure == builtin.coupling.structure

    def test_save_and_load(self, tmp_path: Path) -> None:
        spec = BUILTIN_SCENARIOS["three_agent_asymmetric"]()
        save_scenario(spec, tmp_path / "saved.json")

        assert load_scenario(tmp_path / "saved.json") == spec

    def test_resolve_prefers_files(self, tmp_path: Path) -> None:
        """An existing path wins over a built-in name."""
        path = write_scenario(
            tmp_path / "custom.json",
            {"name": "custom", "agents": [AGENT], "horizon": {"seconds": 0.5, "dt": 0.1}},
        )

        assert resolve_scenario(path).name == "custom"
        assert resolve_scenario("four_agent_swap").name == "four_agent_swap"


class TestExport:
    """Test suite for the trajectory table."""

    def test_rows(self) -> None:
        """One row per (k, agent); controls are blank at the final step."""
        layout = AgentLayout((2, 1), (1, 1))
        traj = Trajectory([[0.0, 1.0, 2.0], [0.5, 1.5, 2.5]], [[0.25, -1.0]], dt=0.1)
        rows = trajectory_rows(layout, traj)

        assert rows[0] == ["k", "t", "agent", "x0", "x1", "u0"]
        assert len(rows) == 1 + 2 * 2
        assert rows[2][2:] == ["1", "2.00000000", "", "-1.00000000"]
        assert rows[-1][-1] == ""

    def test_format_number(self) -> None:
        assert format_number(0.1, trim="-") == "0.1"
        assert format_number(1.0, trim="-") == "1"
        assert format_number(123.456789012) == "123.456789"


@pytest.mark.integration
class TestMain:
    """Test suite for the potgame entry point."""

    def test_usage_errors(self) -> None:
        """A missing subcommand is an input error; --version succeeds."""
        assert main([]) == 2
        assert main(["--version"]) == 0

    def test_certify(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Certify prints the structure and the weights and writes certificate.json."""
        code = main(["certify", "three_agent_asymmetric", "--n", "3", "--output", str(tmp_path)])
        out = capsys.readouterr().out

        assert code == 0
        assert "three_agent_asymmetric: uniform_outgoing, weights (1, 0.1, 0.1)" in out
        summary = json.loads((tmp_path / "certificate.json").read_text())
        assert summary["certified"]
        assert [row[0] for row in summary["weights"]] == pytest.approx([1.0, 0.1, 0.1])

    def test_certify_exact_weights(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["certify", "double_integrator_lq", "--n", "3"]) == 0
        assert "weights all 1" in capsys.readouterr().out

    def test_certify_mixed_structure(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Coefficients without a supported structure exit with 3."""
        path = write_scenario(
            tmp_path / "mixed.json",
            {
                "agents": [AGENT, AGENT, AGENT],
                "coupling": {
                    "coefficients": [[1.0, 2.0, 3.0], [1.0, 1.0, 4.0], [5.0, 1.0, 1.0]],
                    "kernel": "proximity",
                    "d_m": 1.0,
                },
                "horizon": {"seconds": 0.5, "dt": 0.1},
            },
        )

        assert main(["certify", str(path), "--n", "2"]) == 3
        assert "error:" in capsys.readouterr().err

    def test_input_errors(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Parse, schema and missing-file errors all exit with 2."""
        broken = tmp_path / "broken.json"
        broken.write_text('{\n  "name": }', encoding="utf-8")
        empty = write_scenario(
            tmp_path / "empty.json", {"agents": [], "horizon": {"seconds": 1.0, "dt": 0.1}}
        )

        assert main(["solve", str(broken), "--output", str(tmp_path)]) == 2
        assert "line=2" in capsys.readouterr().err
        assert main(["solve", str(empty), "--output", str(tmp_path)]) == 2
        assert main(["certify", str(tmp_path / "absent.json")]) == 2

    def test_solve_open_loop(self, tmp_path: Path) -> None:
        """Solve writes (T+1) N trajectory rows, the metrics and the trace."""
        code = main(["solve", "double_integrator_lq", "--output", str(tmp_path), "--trace"])

        assert code == 0
        with open(tmp_path / "trajectory.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert len(rows) == 1 + 21 * 2
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["status"] == "converged"
        assert not report["failed"]
        trace = (tmp_path / "trace.jsonl").read_text().splitlines()
        assert trace
        assert "cost" in json.loads(trace[0])

    def test_solve_receding(self, tmp_path: Path) -> None:
        """Closed-loop execution replans once per step."""
        argv = ["solve", "double_integrator_lq", "--receding", "--plan", "5"]
        code = main([*argv, "--output", str(tmp_path)])

        assert code == 0
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["mode"] == "receding"
        assert report["metrics"]["solves"] == 20

    def test_solve_infeasible(self, tmp_path: Path) -> None:
        """A rod shorter than the collision distance cannot be satisfied."""
        path = write_scenario(
            tmp_path / "rod.json",
            {
                "agents": [AGENT, {"start": [0.5, 0.0, 0.0, 0.0], "goal": [1.5, 0.0, 0.0, 0.0]}],
                "constraints": {
                    "d_collision": 0.3,
                    "equality_links": [{"agents": [0, 1], "distance": 0.2}],
                },
                "horizon": {"seconds": 0.5, "dt": 0.1},
                "solver": {"penalty_max": 100.0},
            },
        )

        assert main(["solve", str(path), "--output", str(tmp_path)]) == 4
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["failed"]
        assert report["status"] == "failed"

    def test_bench(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Bench writes one row per run, the report and the histogram."""
        argv = ["bench", "double_integrator_lq", "--n", "2", "--workers", "1"]
        code = main([*argv, "--output", str(tmp_path)])

        assert code == 0
        assert "reference 26.15 ms" in capsys.readouterr().out
        assert len((tmp_path / "runs.csv").read_text().splitlines()) == 3
        assert len((tmp_path / "histogram.csv").read_text().splitlines()) == 31
        report = json.loads((tmp_path / "report.json").read_text())
        assert "runs" not in report
        assert report["success_rate"] == 1.0

    def test_check_derivatives(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["check-derivatives", "four_agent_swap", "--n", "3"]) == 0
        out = capsys.readouterr().out
        assert "dynamics" in out
        assert "constraints" in out

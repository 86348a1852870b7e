"""
Tests for settings, solver options and the error hierarchy.
"""

import pytest
from pydantic import ValidationError

from potgame.config import Settings
from potgame.engines.solution import SolverOptions
from potgame.errors import (
    EXIT_CERTIFICATION_FAILURE,
    EXIT_INPUT_ERROR,
    EXIT_SOLVER_FAILURE,
    AsymmetricKernelError,
    DivergenceError,
    PotGameError,
    RecedingHorizonAbort,
    ScenarioParseError,
    SolverFailure,
    WrongStructureError,
)


class TestSettings:
    """Test suite for Settings."""

    def test_defaults(self) -> None:
        cfg = Settings(_env_file=None)

        assert cfg.APP_NAME == "potgame"
        assert cfg.WORKERS == 1
        assert cfg.PENALTY_GROWTH == 10.0
        assert cfg.TIE_BREAK_JITTER == 1e-3

    def test_environment_override(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """POTGAME_ variables override the defaults."""
        monkeypatch.setenv("POTGAME_WORKERS", "4")
        monkeypatch.setenv("POTGAME_SOLVER_MAX_OUTER", "12")
        cfg = Settings(_env_file=None)

        assert cfg.WORKERS == 4
        assert cfg.SOLVER_MAX_OUTER == 12

    def test_invalid_worker_count(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("POTGAME_WORKERS", "0")
        with pytest.raises(ValidationError):
            Settings(_env_file=None)


class TestSolverOptions:
    """Test suite for SolverOptions."""

    def test_defaults_follow_settings(self) -> None:
        opts = SolverOptions()

        assert opts.max_outer == 50
        assert opts.penalty_max == 1e8
        assert opts.line_search_factor == 0.5

    def test_with_overrides(self) -> None:
        """Overrides replace fields; None leaves them alone."""
        opts = SolverOptions().with_overrides(max_inner=7, gradient_tol=None)

        assert opts.max_inner == 7
        assert opts.gradient_tol == SolverOptions().gradient_tol

    @pytest.mark.parametrize(
        "overrides",
        [{"penalty_growth": 1.0}, {"regularization_decay": 1.5}, {"max_outer": 0}],
    )
    def test_invalid_overrides(self, overrides: dict) -> None:
        with pytest.raises(ValidationError):
            SolverOptions().with_overrides(**overrides)

    def test_unknown_field(self) -> None:
        with pytest.raises(ValidationError):
            SolverOptions(unknown=1.0)


class TestErrors:
    """Test suite for the error hierarchy."""

    def test_exit_codes(self) -> None:
        """Input, certification and solver errors map to 2, 3 and 4."""
        assert PotGameError("x").exit_code == EXIT_INPUT_ERROR
        assert ScenarioParseError("x", line=1, column=1).exit_code == EXIT_INPUT_ERROR
        assert WrongStructureError("x").exit_code == EXIT_CERTIFICATION_FAILURE
        assert AsymmetricKernelError("x").exit_code == EXIT_CERTIFICATION_FAILURE
        assert SolverFailure("x").exit_code == EXIT_SOLVER_FAILURE
        assert DivergenceError("x", step=3).exit_code == EXIT_SOLVER_FAILURE

    def test_str_includes_detail(self) -> None:
        err = RecedingHorizonAbort("replan failed", partial=None, failure_index=2)

        assert str(err) == "replan failed (failure_index=2)"
        assert str(PotGameError("plain")) == "plain"

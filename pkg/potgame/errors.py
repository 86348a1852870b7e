"""
Error hierarchy for potgame.

Every error carries a ``detail`` mapping with structured context and the CLI
``exit_code`` it maps to (2 input error, 3 certification failure, 4 solver failure).
"""

from typing import Any, Optional

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_CERTIFICATION_FAILURE = 3
EXIT_SOLVER_FAILURE = 4


class PotGameError(Exception):
    """Base class for all potgame errors."""

    exit_code: int = EXIT_INPUT_ERROR

    def __init__(self, message: str, **detail: Any) -> None:
        super().__init__(message)
        self.message = message
        self.detail: dict[str, Any] = detail

    def __str__(self) -> str:
        if not self.detail:
            return self.message
        context = ", ".join(f"{key}={value}" for key, value in self.detail.items())
        return f"{self.message} ({context})"


class DimensionMismatchError(PotGameError):
    """A joint vector or matrix does not match the agent layout."""


class DivergenceError(PotGameError):
    """Rollout produced a non-finite state."""

    exit_code = EXIT_SOLVER_FAILURE

    def __init__(self, message: str, step: int, **detail: Any) -> None:
        super().__init__(message, step=step, **detail)
        self.step = step


class WrongStructureError(PotGameError):
    """Coefficients do not follow the requested coupling structure."""

    exit_code = EXIT_CERTIFICATION_FAILURE


class AsymmetricKernelError(PotGameError):
    """Pairwise kernels violate L^{ij}(a, b) = L^{ji}(b, a)."""

    exit_code = EXIT_CERTIFICATION_FAILURE


class CertificateMismatchError(PotGameError):
    """A certificate was paired with a game it was not issued for."""

    exit_code = EXIT_CERTIFICATION_FAILURE


class SamplingError(PotGameError):
    """No feasible sample could be drawn within the retry budget."""

    exit_code = EXIT_CERTIFICATION_FAILURE


class NumericalConditioningError(PotGameError):
    """A matrix that must be positive definite is not."""

    exit_code = EXIT_SOLVER_FAILURE


class NoUniqueEquilibriumError(PotGameError):
    """The stacked first-order system of an LQ game is singular."""

    exit_code = EXIT_SOLVER_FAILURE


class SolverFailure(PotGameError):
    """A constrained solve ended without a feasible converged iterate."""

    exit_code = EXIT_SOLVER_FAILURE

    def __init__(self, message: str, best: Optional[Any] = None, **detail: Any) -> None:
        super().__init__(message, **detail)
        self.best = best


class RecedingHorizonAbort(PotGameError):
    """An inner solve failed during closed-loop execution."""

    exit_code = EXIT_SOLVER_FAILURE

    def __init__(
        self, message: str, partial: Optional[Any], failure_index: int, **detail: Any
    ) -> None:
        super().__init__(message, failure_index=failure_index, **detail)
        self.partial = partial
        self.failure_index = failure_index


class ScenarioParseError(PotGameError):
    """A scenario file is not well-formed."""

    def __init__(self, message: str, line: int, column: int, **detail: Any) -> None:
        super().__init__(message, line=line, column=column, **detail)
        self.line = line
        self.column = column


class ScenarioSchemaError(PotGameError):
    """A scenario file parsed but violates the schema."""

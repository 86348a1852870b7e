"""
Configuration Management

Centralized configuration using pydantic-settings.
Reads from environment variables (prefix ``POTGAME_``) and a .env file.
"""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    # App Info
    APP_NAME: str = "potgame"
    APP_VERSION: str = "1.0.1"
    DEBUG: bool = False
    ENVIRONMENT: str = "development"

    # Monte-Carlo worker pool
    WORKERS: int = Field(default=1, ge=1)

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"

    # Solver defaults (iLQR inner loop + augmented Lagrangian outer loop)
    SOLVER_MAX_OUTER: int = 50
    SOLVER_MAX_INNER: int = 100
    SOLVER_COST_TOL: float = 1e-8
    SOLVER_GRADIENT_TOL: float = 1e-6
    SOLVER_CONSTRAINT_TOL: float = 1e-6
    PENALTY_INIT: float = 1.0
    PENALTY_GROWTH: float = 10.0
    PENALTY_MAX: float = 1e8
    REGULARIZATION_INIT: float = 0.0
    REGULARIZATION_MIN: float = 1e-6
    REGULARIZATION_GROWTH: float = 2.0
    REGULARIZATION_DECAY: float = 0.5
    REGULARIZATION_MAX: float = 1e10
    LINE_SEARCH_FACTOR: float = 0.5
    LINE_SEARCH_MIN_STEP: float = 1e-8
    LINE_SEARCH_ACCEPT_RATIO: float = 1e-4

    # Certification and verification
    SYMMETRY_SAMPLES: int = 32
    SYMMETRY_TOL: float = 1e-9
    SYMMETRY_SAMPLE_SCALE: float = 2.0
    VERIFY_SAMPLES: int = 100
    VERIFY_TOL: float = 1e-8
    VERIFY_CONTROL_SCALE: float = 0.5
    VERIFY_MAX_RETRIES: int = 25

    # Finite differences
    FD_STEP: float = 1e-6
    DERIVATIVE_CHECK_STEP: float = 1e-5
    DERIVATIVE_CHECK_TOL: float = 1e-5

    # Scenarios
    TIE_BREAK_JITTER: float = 1e-3

    # Model Config
    model_config = SettingsConfigDict(
        env_prefix="POTGAME_", env_file=".env", env_file_encoding="utf-8", case_sensitive=True
    )


# Global settings instance
settings = Settings()

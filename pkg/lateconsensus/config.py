"""
Configuration management for lateconsensus.

Supports:
- Environment variables (``LATECONSENSUS_*``) and ``.env`` files for process-wide settings
- Flat ``key=value`` trial configuration files with CLI overrides
- XDG-compliant data and log paths
"""

from __future__ import annotations

from collections.abc import Mapping
from functools import lru_cache
from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from platformdirs import user_data_dir
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from lateconsensus.exceptions import ConfigError
from lateconsensus.models import TrialConfig, validate_config

# Application identifiers
APP_NAME = "lateconsensus"
APP_AUTHOR = "lateconsensus"


def get_data_dir() -> Path:
    """Get XDG-compliant data directory."""
    return Path(user_data_dir(APP_NAME, APP_AUTHOR))


def ensure_directories() -> None:
    """Ensure all application directories exist."""
    get_data_dir().mkdir(parents=True, exist_ok=True)


class Settings(BaseSettings):
    """
    Process-wide settings with environment variable support.

    Environment variables:
        LATECONSENSUS_DEBUG: Enable debug logging (default: false)
        LATECONSENSUS_WORKERS: Maximum concurrently running trials (default: 4)
        LATECONSENSUS_RESULTS_DIR: Default directory for CSV output
        LATECONSENSUS_DRIFT_MIN_FREQUENCY: Drift verifier threshold (default: 0.99)
    """

    model_config = SettingsConfigDict(
        env_prefix="LATECONSENSUS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Application Settings
    debug: bool = Field(
        default=False,
        description="Enable debug mode with verbose logging",
    )
    workers: int = Field(
        default=4,
        ge=1,
        le=256,
        description="Maximum concurrently running trials",
    )
    results_dir: Path = Field(
        default_factory=lambda: get_data_dir() / "results",
        description="Directory for experiment and verification CSVs",
    )

    # Verification thresholds
    min_defined_max_violation: float = Field(
        default=1e-3,
        ge=0.0,
        le=1.0,
        description="Largest tolerated fraction of rounds with fewer than 3n/4 defined nodes",
    )
    drift_min_frequency: float = Field(
        default=0.99,
        ge=0.0,
        le=1.0,
        description="Smallest tolerated frequency of the constant-factor drift event",
    )
    jump_min_alpha: float = Field(
        default=0.05,
        ge=0.0,
        le=1.0,
        description="Smallest tolerated probability of a sqrt(n_t/16) jump from balance",
    )
    contraction_a: float = Field(
        default=2.0,
        ge=0.0,
        description="Slope of the log2(log2 n) bound on minority contraction rounds",
    )
    contraction_b: float = Field(
        default=4.0,
        ge=0.0,
        description="Intercept of the log2(log2 n) bound on minority contraction rounds",
    )
    regime_c: float = Field(
        default=1.0,
        gt=0.0,
        description="Constant c of the c*sqrt(ln n / n) lower edge of the drift regime",
    )
    confidence: float = Field(
        default=0.95,
        gt=0.0,
        lt=1.0,
        description="Confidence level of reported intervals",
    )
    oracle_sigma: float = Field(
        default=4.0,
        gt=0.0,
        description="Tolerance in standard errors for oracle cross-checks",
    )

    def ensure_results_dir(self) -> Path:
        """Ensure results directory exists and return path."""
        self.results_dir.mkdir(parents=True, exist_ok=True)
        return self.results_dir

    def get_log_path(self) -> Path:
        """Get path to log file."""
        return get_data_dir() / "lateconsensus.log"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get cached application settings singleton."""
    ensure_directories()
    return Settings()


def reload_settings() -> Settings:
    """Force reload settings (clears cache)."""
    get_settings.cache_clear()
    return get_settings()


def load_trial_config(
    path: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> TrialConfig:
    """
    Build a validated TrialConfig from a ``key=value`` file plus overrides.

    Args:
        path: Flat configuration file; blank lines and ``#`` comments are ignored
        overrides: Values that replace keys of the same name (CLI flags)

    Returns:
        Validated trial configuration

    Raises:
        ConfigError: If the file is missing or the result violates an invariant
    """
    values: dict[str, Any] = {}
    if path is not None:
        if not path.is_file():
            raise ConfigError(f"Configuration file not found: {path}", field="config")
        values.update({k: v for k, v in dotenv_values(path).items() if v is not None})

    fields = TrialConfig.model_fields
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}", field=unknown[0])

    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    return validate_config(values)

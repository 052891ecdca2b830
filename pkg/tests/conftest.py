"""Pytest configuration and fixtures."""

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from lateconsensus.config import Settings
from lateconsensus.models import AdversaryKind, SystemSnapshot, TrialConfig


@pytest.fixture
def settings(tmp_path: Path) -> Settings:
    """Settings writing into a temporary directory."""
    return Settings(results_dir=tmp_path / "results", workers=2)


@pytest.fixture
def small_config() -> TrialConfig:
    """A small binary trial that finishes in milliseconds."""
    return TrialConfig(n=64, epsilon=Fraction(1, 17), seed=7)


@pytest.fixture
def clean_config() -> TrialConfig:
    """Binary trial with no adversary."""
    return TrialConfig(n=128, epsilon=0, adversary=AdversaryKind.NONE, seed=3)


@pytest.fixture
def rng() -> np.random.Generator:
    """Deterministic stream for protocol steps."""
    return np.random.Generator(np.random.PCG64(12345))


def make_snapshot(values: list[int], round: int = 1) -> SystemSnapshot:
    """Snapshot with the given values and nobody blocked or decided."""
    n = len(values)
    return SystemSnapshot(
        round=round,
        values=np.array(values),
        blocked_now=np.zeros(n, dtype=bool),
        decided=np.full(n, -1),
    )


@pytest.fixture
def snapshot_factory():
    """Factory for snapshots from a list of values."""
    return make_snapshot


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """Flat key=value trial configuration."""
    path = tmp_path / "trial.env"
    path.write_text(
        "# small late-balancer cell\n"
        "n=64\n"
        "epsilon=1/17\n"
        "k=6\n"
        "l=3\n"
        "\n"
        "adversary=late-balancer\n"
    )
    return path

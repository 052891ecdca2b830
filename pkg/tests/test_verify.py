"""Tests for the Monte Carlo verifiers, at sizes that run in seconds."""

from pathlib import Path

import pandas as pd
import pytest

from lateconsensus.exceptions import ConfigError, VerificationError
from lateconsensus.farm import TrialFarm
from lateconsensus.models import AdversaryKind, TrialConfig
from lateconsensus.verify import (
    DEFAULT_ORACLE_GRID,
    REPORT_COLUMNS,
    VerificationReport,
    drift_regime,
    ensure_passed,
    estimate_jump,
    jump_constancy,
    proportion_ci,
    run_check,
    step_rounds,
    verify_case1_contraction,
    verify_drift,
    verify_min_defined,
    verify_oracle,
)


@pytest.fixture
def farm(settings) -> TrialFarm:
    return TrialFarm(workers=2, settings=settings)


class TestProportionCI:
    """Tests for proportion_ci."""

    def test_empty(self):
        """No observations, no information."""
        assert proportion_ci(0, 0) == (0.0, 1.0)

    def test_contains_estimate(self):
        """The interval brackets the estimate and stays in [0, 1]."""
        low, high = proportion_ci(50, 100)
        assert low < 0.5 < high
        assert high - 0.5 == pytest.approx(0.5 - low)
        assert proportion_ci(0, 10)[0] == 0.0
        assert proportion_ci(10, 10)[1] == 1.0

    def test_narrows(self):
        """More observations give a narrower interval."""
        small = proportion_ci(5, 10)
        large = proportion_ci(500, 1000)
        assert large[1] - large[0] < small[1] - small[0]


class TestVerificationReport:
    """Tests for report handling."""

    def test_reporting_rows_never_fail(self):
        """Rows with passed=None do not count as failures."""
        report = VerificationReport("demo")
        report.add(n=64, parameter="x=1", trials=10, estimate=0.5)
        assert report.passed
        report.add(n=512, parameter="x=2", trials=10, estimate=0.1, threshold=0.5, passed=False)
        assert not report.passed
        assert [r["parameter"] for r in report.failures] == ["x=2"]

    def test_frame(self):
        """Frames carry every column and a nullable boolean verdict."""
        report = VerificationReport("demo")
        report.add(n=64, parameter="a", trials=1, estimate=1.0)
        report.add(n=64, parameter="b", trials=1, estimate=1.0, passed=True)
        frame = report.to_frame()
        assert list(frame.columns) == REPORT_COLUMNS
        assert str(frame["passed"].dtype) == "boolean"
        assert pd.isna(frame["passed"][0])

    def test_csv_written(self, tmp_path: Path):
        """to_csv writes the file when a path is given."""
        report = VerificationReport("demo")
        report.add(n=64, parameter="a", trials=1, estimate=1.0)
        path = tmp_path / "out" / "demo.csv"
        text = report.to_csv(path)
        assert path.read_text() == text
        assert text.splitlines()[0] == ",".join(REPORT_COLUMNS)

    def test_ensure_passed(self):
        """A failed row raises with the check name."""
        report = VerificationReport("demo")
        report.add(n=512, parameter="x", trials=1, estimate=0.1, threshold=0.5, passed=False)
        with pytest.raises(VerificationError) as exc_info:
            ensure_passed(report)
        assert exc_info.value.check == "demo"
        assert exc_info.value.exit_code == 3


class TestStepRounds:
    """Tests for step_rounds."""

    def test_ignores_termination(self):
        """Rounds continue past agreement."""
        cfg = TrialConfig(n=32, epsilon=0, adversary="none")
        records = step_rounds(cfg, 4, inputs=[1] * 32)
        assert [r.round for r in records] == [1, 2, 3, 4]

    def test_until(self):
        """Stepping stops at the first record satisfying the predicate."""
        cfg = TrialConfig(n=32, epsilon=0, adversary="none")
        records = step_rounds(cfg, 10, inputs=[1] * 32, until=lambda r: r.round == 2)
        assert len(records) == 2


class TestVerifiers:
    """Small-n runs of every verifier; asymptotic claims are reported only."""

    def test_min_defined(self, settings, farm):
        """One row with the violation rate."""
        report = verify_min_defined(64, trials=4, adversary=AdversaryKind.RANDOM, farm=farm, settings=settings)
        (row,) = report.rows
        assert 0.0 <= row["estimate"] <= 1.0
        assert row["passed"] is None

    def test_drift(self, settings, farm):
        """One row per δ; small n is never asserted."""
        report = verify_drift(128, (0.01, 0.2, 0.25), trials=10, farm=farm, settings=settings)
        assert [r["parameter"] for r in report.rows] == ["delta=0.01", "delta=0.2", "delta=0.25"]
        assert all(r["passed"] is None for r in report.rows)
        assert report.rows[0]["note"].startswith("out of regime")
        assert report.rows[2]["note"] == "regime edge"

    @pytest.mark.parametrize("delta", [0.5, -0.5, 0.75])
    def test_drift_rejects_delta(self, settings, farm, delta):
        """|δ| ≥ 1/2 leaves no start state."""
        with pytest.raises(ConfigError, match="below 1/2"):
            verify_drift(128, (delta,), trials=1, farm=farm, settings=settings)

    def test_drift_reports_out_of_regime(self, settings, farm):
        """Non-positive and large δ are run and reported, never asserted."""
        report = verify_drift(128, (0.0, -0.1, 0.4), trials=4, farm=farm, settings=settings)
        notes = [r["note"] for r in report.rows]
        assert notes == ["out of regime (δ ≤ 0)", "out of regime (δ ≤ 0; mirrored)", "regime edge"]
        assert all(r["passed"] is None for r in report.rows)
        assert all(r["trials"] == 4 for r in report.rows)
        assert report.passed

    def test_drift_regime(self):
        """c·√(ln n / n) shrinks with n."""
        assert drift_regime(4096, 1.0) < drift_regime(256, 1.0)

    def test_jump(self, settings, farm):
        """α̂ is a probability."""
        report = estimate_jump(64, trials=10, farm=farm, settings=settings)
        assert 0.0 <= report.rows[0]["estimate"] <= 1.0

    def test_jump_rejects_start(self, settings, farm):
        """The start imbalance must fit in n."""
        with pytest.raises(ConfigError):
            estimate_jump(64, trials=1, start_delta=40, farm=farm, settings=settings)

    def test_jump_constancy(self):
        """Estimates within three CI widths are constant."""
        reports = []
        for n, estimate in ((1024, 0.30), (4096, 0.31)):
            report = VerificationReport("jump")
            report.add(
                n=n, parameter="start_delta=0", trials=1000, estimate=estimate, ci=(estimate - 0.03, estimate + 0.03)
            )
            reports.append(report)
        combined = jump_constancy(reports)
        assert combined.rows[-1]["parameter"] == "constancy"
        assert combined.rows[-1]["passed"] is True

    def test_contraction(self, settings, farm):
        """A per-round row and a median-rounds row."""
        report = verify_case1_contraction(128, trials=4, farm=farm, settings=settings)
        assert [r["parameter"] for r in report.rows] == ["p0=0.125", "median_rounds"]
        assert report.rows[1]["estimate"] >= 0

    def test_contraction_rejects_p0(self, settings, farm):
        """p0 must stay below 1/4."""
        with pytest.raises(ConfigError):
            verify_case1_contraction(128, trials=1, p0=0.3, farm=farm, settings=settings)

    def test_oracle(self, settings):
        """Sampled frequencies agree with the closed forms."""
        report = verify_oracle([(1000, 750, 250)], samples=20_000, settings=settings)
        assert len(report.rows) == 2
        assert report.passed

    def test_oracle_grid_size(self):
        """The default grid has at least twenty points."""
        assert len(DEFAULT_ORACLE_GRID) >= 20


class TestRunCheck:
    """Tests for run_check."""

    def test_unknown(self, settings):
        """Unknown names are config errors."""
        with pytest.raises(ConfigError, match="Unknown check"):
            run_check("nope", settings=settings)

    def test_named(self, settings):
        """Named checks accept n and trials."""
        report = run_check("jump", n=64, trials=5, settings=settings)
        assert report.check == "jump"
        assert len(report.rows) == 1

"""Tests for experiment grids, result files and figure data."""

import io
from fractions import Fraction
from pathlib import Path

import pandas as pd
import pytest
from pydantic import ValidationError

from lateconsensus.exceptions import ConfigError, MalformedResultsError, MissingCellsError, OutputError
from lateconsensus.farm import TrialFarm
from lateconsensus.harness import (
    FIGURES,
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentGrid,
    FigurePreset,
    emit_figure_data,
    fit_log_scaling,
    get_figure,
    nearest_rank,
    read_results,
    results_frame,
    run_experiment,
    summarize,
    write_csv,
)
from lateconsensus.models import BlockingModel, TrialConfig
from lateconsensus.rng import trial_seed


def result_rows(rounds: list[int], outcomes: list[str] | None = None, **cell) -> pd.DataFrame:
    """Synthetic results for one cell."""
    outcomes = outcomes or ["success"] * len(rounds)
    base = {
        "n": 64, "epsilon": "1/17", "k": 6, "l": 3, "protocol": "binary",
        "adversary": "late-balancer", "lateness": 1,
    }
    base.update(cell)
    return pd.DataFrame(
        [
            {
                **base,
                "trial_id": i,
                "seed": i,
                "outcome": outcome,
                "rounds": r,
                "final_majority": 1,
                "final_bot": 0,
                "decided_count": base["n"],
            }
            for i, (r, outcome) in enumerate(zip(rounds, outcomes, strict=True))
        ],
        columns=RESULT_COLUMNS,
    )


@pytest.fixture
def farm(settings) -> TrialFarm:
    return TrialFarm(workers=2, settings=settings)


class TestExperimentGrid:
    """Tests for grid expansion."""

    def test_cells_cross_product(self):
        """Every combination becomes a validated cell."""
        grid = ExperimentGrid(n=[32, 64], epsilon=["1/17", "1/16"], trials=2)
        cells = grid.cells()
        assert len(cells) == 4
        assert cells[0].n == 32 and cells[0].epsilon == Fraction(1, 17)
        assert grid.size == 8

    def test_job_seeds(self):
        """Trial ids run across cells; seeds derive from the master seed."""
        grid = ExperimentGrid(n=[32, 64], epsilon=["1/16"], trials=3, seed=9)
        jobs = grid.jobs()
        assert [j.trial_id for j in jobs] == list(range(6))
        assert jobs[4].config.n == 64
        assert jobs[4].config.seed == trial_seed(9, 4)

    def test_invalid_cell_named(self):
        """Invalid cells are reported with their parameters."""
        grid = ExperimentGrid(n=[32], epsilon=["1/16"], l=[4])
        with pytest.raises(ConfigError, match="in cell n=32"):
            grid.cells()

    def test_base_cannot_shadow_grid(self):
        """Grid parameters stay out of base."""
        with pytest.raises(ValidationError):
            ExperimentGrid(n=[32], epsilon=["1/16"], base={"n": 64})

    def test_single(self):
        """A config becomes a one-cell grid keeping its other settings."""
        cfg = TrialConfig(n=32, epsilon="1/20", initial_bias=4)
        (cell,) = ExperimentGrid.single(cfg, trials=1, seed=0).cells()
        assert cell.initial_bias == 4
        assert cell.epsilon == Fraction(1, 20)


class TestRunExperiment:
    """Tests for running grids."""

    def test_zero_trials(self, farm):
        """No trials gives a header-only CSV."""
        frame = run_experiment(ExperimentGrid(n=[32], epsilon=["1/16"], trials=0), farm=farm)
        assert frame.empty
        assert write_csv(frame).splitlines() == [",".join(frame.columns)]

    def test_deterministic(self, farm, settings, tmp_path: Path):
        """Same grid and seed, byte-identical CSV."""
        grid = ExperimentGrid(n=[32], epsilon=["1/17"], trials=3, seed=4)
        first = run_experiment(grid, tmp_path / "a.csv", farm=farm)
        second = run_experiment(grid, tmp_path / "b.csv", farm=TrialFarm(workers=1, settings=settings))
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
        assert list(first["trial_id"]) == [0, 1, 2]
        pd.testing.assert_frame_equal(first, second)

    def test_progress(self, farm):
        """Progress reaches the trial count."""
        seen = []
        run_experiment(
            ExperimentGrid(n=[32], epsilon=["1/16"], trials=2),
            farm=farm,
            on_progress=lambda done, total, _: seen.append((done, total)),
        )
        assert max(seen) == (2, 2)

    def test_unwritable_output(self, farm, tmp_path: Path):
        """A directory as output path is rejected before running."""
        with pytest.raises(OutputError):
            run_experiment(ExperimentGrid(n=[32], epsilon=["1/16"], trials=1), tmp_path, farm=farm)

    def test_results_frame_layout(self):
        """Empty frames still carry every column."""
        frame = results_frame([])
        assert list(frame.columns)[: len(RESULT_COLUMNS)] == RESULT_COLUMNS


class TestReadResults:
    """Tests for loading results."""

    def test_round_trip(self):
        """A written frame reads back with normalized ε."""
        frame = read_results(io.StringIO(write_csv(result_rows([3, 4]))))
        assert list(frame["rounds"]) == [3, 4]
        assert frame["epsilon"].iloc[0] == "1/17"

    def test_missing_columns(self):
        """Missing required columns are listed."""
        with pytest.raises(MalformedResultsError) as exc_info:
            read_results(io.StringIO("n,epsilon\n64,1/17\n"))
        assert "rounds" in exc_info.value.missing

    def test_missing_file(self, tmp_path: Path):
        """Absent files are malformed input."""
        with pytest.raises(MalformedResultsError, match="not found"):
            read_results(tmp_path / "absent.csv")

    def test_bad_epsilon(self):
        """Unparseable ε is rejected."""
        text = write_csv(result_rows([3])).replace("1/17", "x/y")
        with pytest.raises(MalformedResultsError):
            read_results(io.StringIO(text))


class TestSummarize:
    """Tests for per-cell statistics."""

    def test_nearest_rank(self):
        """Nearest-rank percentiles."""
        assert nearest_rank(list(range(1, 21))) == 19
        assert nearest_rank([7]) == 7
        assert nearest_rank([]) is None

    def test_single_trial(self):
        """One successful trial of 7 rounds has mean and p95 of 7."""
        summary = summarize(result_rows([7]))
        assert list(summary.columns) == SUMMARY_COLUMNS
        row = summary.iloc[0]
        assert row["success_rate"] == 1.0
        assert row["mean_rounds"] == 7
        assert row["p95_rounds"] == 7

    def test_successes_only(self):
        """Round statistics ignore failed trials; the _all columns do not."""
        summary = summarize(result_rows([4, 6, 100], ["success", "success", "adversary-win"]))
        row = summary.iloc[0]
        assert row["success_rate"] == pytest.approx(2 / 3)
        assert row["mean_rounds"] == 5
        assert row["mean_rounds_all"] == pytest.approx(110 / 3)
        assert row["p95_rounds_all"] == 100

    def test_all_failures(self):
        """Cells without a success leave round statistics empty."""
        row = summarize(result_rows([9, 9], ["timeout", "timeout"])).iloc[0]
        assert row["success_rate"] == 0.0
        assert pd.isna(row["mean_rounds"])
        assert pd.isna(row["p95_rounds"])

    def test_cells_in_order(self):
        """One row per cell, ordered by n then ε."""
        results = pd.concat(
            [result_rows([5], n=128, epsilon="1/16"), result_rows([5], epsilon="1/14"), result_rows([5])]
        )
        summary = summarize(results)
        assert list(zip(summary["n"], summary["epsilon"])) == [(64, "1/17"), (64, "1/14"), (128, "1/16")]

    def test_empty(self):
        """No results, no rows."""
        assert summarize(result_rows([])).empty


class TestFigures:
    """Tests for figure presets and data."""

    def test_presets(self):
        """Preset grids match their documented sweeps."""
        assert len(FIGURES["fig1"].cells()) == 6 * 4
        assert FIGURES["fig2"].epsilon[0] == Fraction(1, 17)
        assert FIGURES["fig2"].epsilon[-1] == Fraction(1, 5)
        assert get_figure("fanout").k == (6, 12, 24)

    def test_presets_withhold(self):
        """Figure grids run with blocked nodes withholding their last pushes."""
        cells = FIGURES["fig1"].grid(trials=1).cells()
        assert {c.blocking for c in cells} == {BlockingModel.WITHHOLD}
        assert ExperimentGrid(n=[32], epsilon=["1/16"]).cells()[0].blocking is BlockingModel.RECEIVE

    def test_unknown_figure(self):
        """Unknown names are config errors."""
        with pytest.raises(ConfigError):
            get_figure("fig9")

    def test_emit(self):
        """Rows follow the preset's grid order."""
        preset = FigurePreset("tiny", "", n=(64, 128), epsilon=(Fraction(1, 17),), k=(6,))
        summary = summarize(pd.concat([result_rows([5], n=128), result_rows([3, 5])]))
        data = emit_figure_data(summary, preset)
        assert list(data.columns) == ["n", "epsilon", "mean", "p95", "success_rate"]
        assert list(data["n"]) == [64, 128]
        assert list(data["mean"]) == [4, 5]

    def test_emit_fanout_has_k(self):
        """Fanout sweeps lead with k."""
        preset = FigurePreset("k", "", n=(64,), epsilon=(Fraction(1, 17),), k=(6, 12))
        summary = summarize(pd.concat([result_rows([5]), result_rows([4], k=12)]))
        data = emit_figure_data(summary, preset)
        assert list(data.columns)[0] == "k"
        assert list(data["k"]) == [6, 12]

    def test_missing_cells(self):
        """Every absent cell is listed."""
        preset = FigurePreset("tiny", "", n=(64, 128, 256), epsilon=(Fraction(1, 17),), k=(6,))
        with pytest.raises(MissingCellsError) as exc_info:
            emit_figure_data(summarize(result_rows([5])), preset)
        assert exc_info.value.cells == ["n=128, epsilon=1/17", "n=256, epsilon=1/17"]

    def test_fit_log_scaling(self):
        """An exact a + b·log2 n relationship is recovered."""
        summary = pd.DataFrame({"n": [128, 256, 512], "mean_rounds": [17.0, 19.0, 21.0]})
        a, b, residual = fit_log_scaling(summary)
        assert a == pytest.approx(3.0)
        assert b == pytest.approx(2.0)
        assert residual == pytest.approx(0.0, abs=1e-9)

    def test_fit_needs_points(self):
        """Fewer than two usable cells cannot be fitted."""
        with pytest.raises(MalformedResultsError):
            fit_log_scaling(pd.DataFrame({"n": [128], "mean_rounds": [5.0]}))

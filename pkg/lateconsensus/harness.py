"""
Experiment grids, result files and figure data.

A grid is the cross product of its parameter lists; every cell runs ``trials``
independent trials whose seeds derive from the master seed and a running
trial id. Results are one CSV row per trial; ``summarize`` reduces them to
per-cell statistics and ``emit_figure_data`` lays a summary out as bar-chart
data for one of the preset figures.
"""

from __future__ import annotations

import io
import itertools
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from lateconsensus.exceptions import (
    ConfigError,
    MalformedResultsError,
    MissingCellsError,
    OutputError,
)
from lateconsensus.farm import FarmProgress, TrialFarm, TrialJob, TrialRecord, completed_records
from lateconsensus.models import (
    AdversaryKind,
    BlockingModel,
    ProtocolKind,
    Rational,
    TrialConfig,
    validate_config,
)
from lateconsensus.rng import trial_seed

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "trial_id", "n", "epsilon", "k", "l", "protocol", "adversary", "lateness", "seed",
    "outcome", "rounds", "final_majority", "final_bot", "decided_count",
]
EXTRA_COLUMNS = [
    "outcome_value", "agree_x_star", "validity_violations", "messages", "conflicting_outputs",
]
CELL_KEYS = ["n", "epsilon", "k", "l", "protocol", "adversary", "lateness"]
SUMMARY_COLUMNS = [
    *CELL_KEYS,
    "trials", "successes", "success_rate", "mean_rounds", "p95_rounds",
    "mean_rounds_all", "p95_rounds_all", "conflicting_outputs", "validity_violations",
]
PERCENTILE = 95


class ExperimentGrid(BaseModel):
    """Parameter lists whose cross product defines the cells of an experiment."""

    model_config = ConfigDict(frozen=True)

    n: list[int] = Field(min_length=1)
    epsilon: list[Rational] = Field(min_length=1)
    k: list[int] = Field(default_factory=lambda: [6], min_length=1)
    l: list[int] = Field(default_factory=lambda: [3], min_length=1)  # noqa: E741
    protocol: list[ProtocolKind] = Field(default_factory=lambda: [ProtocolKind.BINARY])
    adversary: list[AdversaryKind] = Field(default_factory=lambda: [AdversaryKind.LATE_BALANCER])
    lateness: list[int] = Field(default_factory=lambda: [1], min_length=1)
    trials: int = Field(default=1000, ge=0)
    seed: int = Field(default=0, ge=0)
    base: dict[str, Any] = Field(
        default_factory=dict,
        description="Further TrialConfig values shared by every cell",
    )

    @field_validator("base")
    @classmethod
    def check_base_keys(cls, v: dict[str, Any]) -> dict[str, Any]:
        grid_keys = {"n", "epsilon", "k", "l", "protocol", "adversary", "lateness", "seed"}
        unknown = sorted(set(v) - set(TrialConfig.model_fields))
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        clash = sorted(set(v) & grid_keys)
        if clash:
            raise ValueError(f"grid parameters cannot be set in base: {', '.join(clash)}")
        return v

    @classmethod
    def single(cls, cfg: TrialConfig, trials: int, seed: int) -> ExperimentGrid:
        """Grid with the one cell described by ``cfg``."""
        base = cfg.model_dump(
            exclude={"n", "epsilon", "k", "l", "protocol", "adversary", "lateness", "seed"},
        )
        return cls(
            n=[cfg.n],
            epsilon=[cfg.epsilon],
            k=[cfg.k],
            l=[cfg.l],
            protocol=[cfg.protocol],
            adversary=[cfg.adversary],
            lateness=[cfg.lateness],
            trials=trials,
            seed=seed,
            base={k: v for k, v in base.items() if v is not None},
        )

    def cells(self) -> list[TrialConfig]:
        """
        One validated configuration per cell, in grid order.

        Raises:
            ConfigError: Naming the first invalid cell
        """
        cells = []
        for n, eps, k, l, protocol, adversary, lateness in itertools.product(  # noqa: E741
            self.n, self.epsilon, self.k, self.l, self.protocol, self.adversary, self.lateness
        ):
            values = {
                **self.base,
                "n": n,
                "epsilon": eps,
                "k": k,
                "l": l,
                "protocol": protocol,
                "adversary": adversary,
                "lateness": lateness,
            }
            try:
                cells.append(validate_config(values))
            except ConfigError as e:
                raise ConfigError(
                    f"{e.message} in cell n={n}, ε={eps}, ({k},{l}), "
                    f"{protocol.value}/{adversary.value}, lateness={lateness}",
                    field=e.field,
                ) from None
        return cells

    def jobs(self) -> list[TrialJob]:
        """Every trial of the grid with its derived seed."""
        jobs = []
        for cell_index, cell in enumerate(self.cells()):
            for i in range(self.trials):
                trial_id = cell_index * self.trials + i
                seed = trial_seed(self.seed, trial_id)
                jobs.append(
                    TrialJob(trial_id=trial_id, config=cell.model_copy(update={"seed": seed}))
                )
        return jobs

    @property
    def size(self) -> int:
        return len(self.cells()) * self.trials


def result_row(record: TrialRecord) -> dict[str, Any]:
    """CSV row of one finished trial."""
    cfg, result = record.job.config, record.result
    return {
        "trial_id": record.job.trial_id,
        "n": cfg.n,
        "epsilon": str(cfg.epsilon),
        "k": cfg.k,
        "l": cfg.l,
        "protocol": cfg.protocol.value,
        "adversary": cfg.adversary.value,
        "lateness": cfg.lateness,
        "seed": cfg.seed,
        "outcome": result.outcome.kind.value,
        "rounds": result.rounds,
        "final_majority": result.final_majority,
        "final_bot": result.final_bot,
        "decided_count": result.decided_count,
        "outcome_value": result.outcome.value,
        "agree_x_star": result.agree_x_star,
        "validity_violations": result.validity_violations,
        "messages": result.messages,
        "conflicting_outputs": result.conflicting_outputs,
    }


def results_frame(records: Iterable[TrialRecord]) -> pd.DataFrame:
    """Per-trial results in CSV layout, sorted by trial id."""
    frame = pd.DataFrame([result_row(r) for r in records], columns=RESULT_COLUMNS + EXTRA_COLUMNS)
    for column in ("final_majority", "outcome_value", "agree_x_star"):
        frame[column] = frame[column].astype("Int64")
    return frame.sort_values("trial_id", kind="stable").reset_index(drop=True)


def write_csv(frame: pd.DataFrame, path: Path | None = None) -> str:
    """
    CSV text of ``frame``, also written to ``path`` when given.

    Raises:
        OutputError: If the path cannot be written
    """
    text = frame.to_csv(index=False, lineterminator="\n")
    if path is not None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as e:
            raise OutputError(f"Cannot write results: {e.strerror or e}", path=path) from e
    return text


def run_experiment(
    grid: ExperimentGrid,
    out: Path | None = None,
    *,
    farm: TrialFarm | None = None,
    on_progress: FarmProgress | None = None,
) -> pd.DataFrame:
    """
    Run every trial of ``grid``.

    Args:
        grid: Validated experiment grid
        out: CSV destination; nothing is written when omitted
        farm: Trial runner (default: one sized by ``Settings.workers``)
        on_progress: Callback(completed, total, record_or_none)

    Returns:
        One row per trial, ordered by trial id

    Raises:
        ConfigError: For an invalid grid cell
        OutputError: If ``out`` cannot be written
    """
    jobs = grid.jobs()
    if out is not None:
        _check_writable(out)
    farm = farm or TrialFarm()
    logger.info(f"running {len(jobs)} trials over {len(grid.cells())} cells")
    records = completed_records(farm.run_sync(jobs, on_progress=on_progress))
    frame = results_frame(records)
    write_csv(frame, out)
    return frame


def _check_writable(path: Path) -> None:
    if path.exists() and path.is_dir():
        raise OutputError("Output path is a directory", path=path)
    parent = path.parent
    if parent.exists() and not parent.is_dir():
        raise OutputError("Output parent is not a directory", path=path)


def read_results(source: Path | str | io.StringIO) -> pd.DataFrame:
    """
    Load a results CSV.

    Raises:
        MalformedResultsError: If the file is unreadable or lacks required columns
    """
    try:
        frame = pd.read_csv(source, dtype={"epsilon": str})
    except FileNotFoundError:
        raise MalformedResultsError(f"Results file not found: {source}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise MalformedResultsError(f"Cannot parse results: {e}") from None
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise MalformedResultsError(missing=missing)
    try:
        frame["epsilon"] = frame["epsilon"].map(lambda v: str(Fraction(v)))
        frame["rounds"] = pd.to_numeric(frame["rounds"], errors="raise")
    except (ValueError, ZeroDivisionError, TypeError) as e:
        raise MalformedResultsError(f"Bad value in results: {e}") from None
    return frame


def nearest_rank(values: Sequence[float] | np.ndarray, q: float = PERCENTILE) -> float | None:
    """Nearest-rank percentile; ``None`` for no values."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return None
    return float(np.percentile(arr, q, method="inverted_cdf"))


def _cell_stats(group: pd.DataFrame) -> dict[str, Any]:
    rounds_all = group["rounds"].to_numpy()
    success = group["outcome"] == "success"
    rounds_ok = group.loc[success, "rounds"].to_numpy()
    extra = {
        column: int(group[column].fillna(0).sum()) if column in group else 0
        for column in ("conflicting_outputs", "validity_violations")
    }
    return {
        "trials": len(group),
        "successes": int(success.sum()),
        "success_rate": float(success.mean()) if len(group) else 0.0,
        "mean_rounds": float(rounds_ok.mean()) if rounds_ok.size else None,
        "p95_rounds": nearest_rank(rounds_ok),
        "mean_rounds_all": float(rounds_all.mean()) if rounds_all.size else None,
        "p95_rounds_all": nearest_rank(rounds_all),
        **extra,
    }


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """
    Per-cell success rate, mean and 95th-percentile rounds.

    Round statistics cover successful trials only; cells without a success
    leave them empty. The ``_all`` columns repeat them over every trial.
    """
    missing = [c for c in RESULT_COLUMNS if c not in results.columns]
    if missing:
        raise MalformedResultsError(missing=missing)
    if results.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)

    ordered = results.assign(_eps=results["epsilon"].map(Fraction))
    ordered = ordered.sort_values(["n", "_eps", "k", "l", "protocol", "adversary", "lateness"], kind="stable")
    rows = [
        {**dict(zip(CELL_KEYS, key, strict=True)), **_cell_stats(group)}
        for key, group in ordered.groupby(CELL_KEYS, sort=False)
    ]
    summary = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    for _, row in summary.iterrows():
        if row["successes"] and row["p95_rounds"] != row["p95_rounds_all"]:
            logger.info(
                f"cell n={row['n']} ε={row['epsilon']}: p95 {row['p95_rounds']} over successes, "
                f"{row['p95_rounds_all']} over all trials"
            )
    return summary


@dataclass(frozen=True)
class FigurePreset:
    """Grid and layout of one bar chart."""

    name: str
    description: str
    n: tuple[int, ...]
    epsilon: tuple[Fraction, ...]
    k: tuple[int, ...]
    l: int = 3  # noqa: E741
    blocking: BlockingModel = BlockingModel.WITHHOLD

    @property
    def by_fanout(self) -> bool:
        return len(self.k) > 1

    def grid(self, trials: int = 1000, seed: int = 0) -> ExperimentGrid:
        return ExperimentGrid(
            n=list(self.n),
            epsilon=list(self.epsilon),
            k=list(self.k),
            l=[self.l],
            trials=trials,
            seed=seed,
            base={"blocking": self.blocking.value},
        )

    def cells(self) -> list[tuple[int, int, Fraction]]:
        return [(k, n, eps) for k in self.k for n in self.n for eps in self.epsilon]


FIGURE_SIZES = (128, 256, 512, 1024, 2048, 4096)
WIDE_EPSILONS = tuple(Fraction(1, d) for d in range(17, 4, -1))

FIGURES: dict[str, FigurePreset] = {
    "fig1": FigurePreset(
        name="fig1",
        description="(6,3)-majority near its resilience limit",
        n=FIGURE_SIZES,
        epsilon=tuple(Fraction(1, d) for d in (17, 16, 15, 14)),
        k=(6,),
    ),
    "fig2": FigurePreset(
        name="fig2",
        description="(12,3)-majority over a wide range of ε",
        n=FIGURE_SIZES,
        epsilon=WIDE_EPSILONS,
        k=(12,),
    ),
    "fanout": FigurePreset(
        name="fanout",
        description="(k,3)-majority for k ∈ {6, 12, 24}",
        n=FIGURE_SIZES,
        epsilon=WIDE_EPSILONS,
        k=(6, 12, 24),
    ),
}


def get_figure(name: str) -> FigurePreset:
    try:
        return FIGURES[name]
    except KeyError:
        raise ConfigError(
            f"Unknown figure: {name} (choose from {', '.join(FIGURES)})", field="which"
        ) from None


def emit_figure_data(summary: pd.DataFrame, figure: str | FigurePreset) -> pd.DataFrame:
    """
    Bar-chart data for a preset figure.

    Columns are n, epsilon, mean, p95 and success_rate (preceded by k for the
    fanout sweep), one row per grid cell in grid order.

    Raises:
        MissingCellsError: Listing every grid cell the summary lacks
    """
    preset = figure if isinstance(figure, FigurePreset) else get_figure(figure)
    index: dict[tuple[int, int, Fraction], pd.Series] = {}
    if not summary.empty:
        for _, row in summary.iterrows():
            if row["protocol"] != ProtocolKind.BINARY.value or int(row["l"]) != preset.l:
                continue
            key = (int(row["k"]), int(row["n"]), Fraction(str(row["epsilon"])))
            index.setdefault(key, row)

    rows, missing = [], []
    for k, n, eps in preset.cells():
        row = index.get((k, n, eps))
        if row is None:
            missing.append(f"k={k}, n={n}, epsilon={eps}" if preset.by_fanout else f"n={n}, epsilon={eps}")
            continue
        rows.append(
            {
                "k": k,
                "n": n,
                "epsilon": str(eps),
                "mean": row["mean_rounds"],
                "p95": row["p95_rounds"],
                "success_rate": row["success_rate"],
            }
        )
    if missing:
        raise MissingCellsError(f"{preset.name}: {len(missing)} cells missing", cells=missing)

    columns = ["n", "epsilon", "mean", "p95", "success_rate"]
    if preset.by_fanout:
        columns = ["k", *columns]
    return pd.DataFrame(rows, columns=["k", "n", "epsilon", "mean", "p95", "success_rate"])[columns]


def fit_log_scaling(summary: pd.DataFrame) -> tuple[float, float, float]:
    """
    Least-squares fit of mean rounds to a + b·log2 n.

    Returns:
        (a, b, largest absolute residual in rounds)

    Raises:
        MalformedResultsError: With fewer than two cells holding a mean
    """
    usable = summary.dropna(subset=["mean_rounds"])
    if len(usable) < 2:
        raise MalformedResultsError("need at least two cells with successful trials to fit")
    x = np.log2(usable["n"].to_numpy(dtype=float))
    y = usable["mean_rounds"].to_numpy(dtype=float)
    b, a = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (a + b * x))))
    return float(a), float(b), residual

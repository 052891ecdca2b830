"""
lateconsensus CLI - run, summarize and verify consensus experiments.

Features:
- Experiment runs from a key=value config file plus flag overrides
- Rich progress bars and summary tables
- Figure data for the preset bar charts
- Statistical verification checks and closed-form oracle values
"""

from __future__ import annotations

import logging
import sys
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, NoReturn

import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table
from rich.text import Text

from lateconsensus import __version__
from lateconsensus.config import get_settings, load_trial_config
from lateconsensus.exceptions import ConfigError, LateConsensusError, OutputError
from lateconsensus.farm import FarmProgress, TrialFarm
from lateconsensus.harness import (
    FIGURES,
    ExperimentGrid,
    emit_figure_data,
    get_figure,
    read_results,
    run_experiment,
    summarize,
    write_csv,
)
from lateconsensus.models import AdversaryKind, ProtocolKind, TrialConfig
from lateconsensus.oracle import FORMULAS, evaluate
from lateconsensus.verify import CHECKS, ensure_passed, run_check

# Initialize console for rich output
console = Console()
err_console = Console(stderr=True)

# Create the main app
app = typer.Typer(
    name="sim",
    help="Consensus under a late blocking adversary: simulation and experiments",
    add_completion=True,
    rich_markup_mode="rich",
    no_args_is_help=True,
)


class OutputFormat(str, Enum):
    """Output format options."""
    TABLE = "table"
    CSV = "csv"
    QUIET = "quiet"


def print_banner() -> None:
    """Print the lateconsensus banner."""
    banner = Text()
    banner.append("lateconsensus", style="bold magenta")
    banner.append(" v" + __version__, style="dim")
    banner.append(" - consensus under a late adversary", style="cyan")
    console.print(Panel(banner, border_style="magenta"))


def print_error(message: str, exception: Exception | None = None) -> None:
    """Print an error message."""
    err_console.print(f"[bold red]Error:[/bold red] {message}")
    if exception and get_settings().debug:
        err_console.print(f"[dim]{type(exception).__name__}: {exception!r}[/dim]")


def print_success(message: str) -> None:
    """Print a success message."""
    err_console.print(f"[bold green]Success:[/bold green] {message}")


def fail(error: LateConsensusError) -> NoReturn:
    """Report ``error`` and exit with its code."""
    print_error(str(error), error)
    raise typer.Exit(error.exit_code)


def parse_assignments(assignments: list[str] | None) -> dict[str, str]:
    """Turn ``key=value`` strings into a mapping."""
    values: dict[str, str] = {}
    for item in assignments or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Expected key=value, got {item!r}", field="set")
        values[key.strip()] = value.strip()
    return values


def _format(value: Any, digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and pd.isna(value)):
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def display_frame(frame: pd.DataFrame, title: str, target: Console | None = None) -> None:
    """Display a DataFrame as a rich table."""
    table = Table(
        title=title,
        show_header=True,
        header_style="bold magenta",
        border_style="blue",
    )
    for column in frame.columns:
        table.add_column(str(column), style="cyan" if column in ("n", "epsilon") else None)
    for row in frame.itertuples(index=False):
        table.add_row(*(_format(v) for v in row))
    (target or console).print(table)


def emit(frame: pd.DataFrame, title: str, out: Path | None, output_format: OutputFormat) -> None:
    """Write ``frame`` to ``out`` or show it in the requested format."""
    if out is not None:
        write_csv(frame, out)
        print_success(f"Wrote {len(frame)} rows to {out}")
    if output_format is OutputFormat.TABLE:
        display_frame(frame, title, console if out is not None else err_console)
    if output_format is OutputFormat.CSV and out is None:
        typer.echo(write_csv(frame), nl=False)


def default_output(name: str) -> Path:
    """``<results_dir>/<name>.csv``, creating the directory."""
    try:
        return get_settings().ensure_results_dir() / f"{name}.csv"
    except OSError as e:
        raise OutputError(f"Cannot create results directory: {e}") from e


def progress_bar() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=err_console,
        transient=True,
    )


def run_with_progress(grid: ExperimentGrid, out: Path | None, workers: int | None) -> pd.DataFrame:
    farm = TrialFarm(workers=workers)
    with progress_bar() as progress:
        task = progress.add_task("Running trials...", total=grid.size)

        def on_progress(completed: int, total: int, _: Any) -> None:
            progress.update(task, completed=completed, total=total)

        callback: FarmProgress = on_progress
        return run_experiment(grid, out, farm=farm, on_progress=callback)


@app.command()
def run(
    config: Annotated[
        Path | None,
        typer.Option(
            "--config", "-c",
            help="key=value trial configuration file",
            exists=True,
            dir_okay=False,
        ),
    ] = None,
    n: Annotated[
        list[int] | None,
        typer.Option("--n", help="Number of nodes (repeat for a sweep)"),
    ] = None,
    epsilon: Annotated[
        list[str] | None,
        typer.Option("--epsilon", "-e", help="Blocking fraction, e.g. 1/16 (repeatable)"),
    ] = None,
    k: Annotated[
        list[int] | None,
        typer.Option("--k", help="Push fanout (repeatable)"),
    ] = None,
    l: Annotated[  # noqa: E741
        int | None,
        typer.Option("--l", help="Sample size"),
    ] = None,
    protocol: Annotated[
        ProtocolKind | None,
        typer.Option("--protocol", "-p", help="Protocol"),
    ] = None,
    adversary: Annotated[
        AdversaryKind | None,
        typer.Option("--adversary", "-a", help="Blocking strategy"),
    ] = None,
    lateness: Annotated[
        list[int] | None,
        typer.Option("--lateness", "-L", help="Adversary staleness in rounds (repeatable)"),
    ] = None,
    trials: Annotated[
        int,
        typer.Option("--trials", "-t", help="Trials per cell", min=0, show_default=True),
    ] = 1000,
    seed: Annotated[
        int,
        typer.Option("--seed", "-s", help="Master seed", min=0, show_default=True),
    ] = 0,
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Results CSV (default: stdout)", dir_okay=False),
    ] = None,
    assignments: Annotated[
        list[str] | None,
        typer.Option("--set", help="Any other TrialConfig key as key=value (repeatable)"),
    ] = None,
    workers: Annotated[
        int | None,
        typer.Option("--workers", "-w", help="Concurrent trials (default from settings)", min=1),
    ] = None,
) -> None:
    """
    Run an experiment grid and write one CSV row per trial.

    Examples:
        sim run --n 128 --epsilon 1/17 --trials 1000 --out fig1.csv
        sim run --config trial.env --lateness 1 --lateness 2 --lateness 4
        sim run -p multivalue -a random --set c1=4 --set mv_uniform_start=true
    """
    try:
        overrides: dict[str, Any] = parse_assignments(assignments)
        flags = {
            "n": n[0] if n else None,
            "epsilon": epsilon[0] if epsilon else None,
            "k": k[0] if k else None,
            "l": l,
            "protocol": protocol,
            "adversary": adversary,
            "lateness": lateness[0] if lateness else None,
        }
        overrides.update({key: v for key, v in flags.items() if v is not None})
        cfg = load_trial_config(config, overrides)
        grid = _grid_from(cfg, n, epsilon, k, lateness, trials, seed)
        frame = run_with_progress(grid, out, workers)
    except LateConsensusError as e:
        fail(e)

    if out is None:
        typer.echo(write_csv(frame), nl=False)
    else:
        print_success(f"Wrote {len(frame)} trials to {out}")
    if len(frame):
        display_frame(_short_summary(summarize(frame)), "Summary", err_console)


def _grid_from(
    cfg: TrialConfig,
    n: list[int] | None,
    epsilon: list[str] | None,
    k: list[int] | None,
    lateness: list[int] | None,
    trials: int,
    seed: int,
) -> ExperimentGrid:
    grid = ExperimentGrid.single(cfg, trials, seed)
    sweep: dict[str, Any] = {}
    if n and len(n) > 1:
        sweep["n"] = n
        if cfg.max_rounds == TrialConfig(n=cfg.n).max_rounds:
            # Default round cap, recomputed per n.
            sweep["base"] = {key: v for key, v in grid.base.items() if key != "max_rounds"}
    if epsilon and len(epsilon) > 1:
        sweep["epsilon"] = epsilon
    if k and len(k) > 1:
        sweep["k"] = k
    if lateness and len(lateness) > 1:
        sweep["lateness"] = lateness
    if not sweep:
        return grid
    return ExperimentGrid.model_validate({**grid.model_dump(), **sweep})


def _short_summary(summary: pd.DataFrame) -> pd.DataFrame:
    return summary[
        ["n", "epsilon", "k", "adversary", "lateness", "trials", "success_rate", "mean_rounds", "p95_rounds"]
    ]


@app.command("summarize")
def summarize_cmd(
    input_path: Annotated[
        Path,
        typer.Option("--in", "-i", help="Results CSV from 'sim run'", dir_okay=False),
    ],
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Write the summary CSV here", dir_okay=False),
    ] = None,
    output_format: Annotated[
        OutputFormat,
        typer.Option("--format", "-f", help="Output format", show_default=True),
    ] = OutputFormat.TABLE,
) -> None:
    """
    Per-cell success rate, mean rounds and nearest-rank 95th percentile.

    Round statistics cover successful trials; the _all columns cover every trial.
    """
    try:
        summary = summarize(read_results(input_path))
        emit(summary, "Summary", out, output_format)
    except LateConsensusError as e:
        fail(e)


@app.command()
def figure(
    which: Annotated[
        str,
        typer.Option("--which", help=f"Figure preset ({', '.join(FIGURES)})"),
    ],
    input_path: Annotated[
        Path | None,
        typer.Option("--in", "-i", help="Summarize this results CSV instead of running", dir_okay=False),
    ] = None,
    trials: Annotated[
        int,
        typer.Option("--trials", "-t", help="Trials per cell when running", min=1, show_default=True),
    ] = 1000,
    seed: Annotated[
        int,
        typer.Option("--seed", "-s", help="Master seed when running", min=0, show_default=True),
    ] = 0,
    out: Annotated[
        Path | None,
        typer.Option(
            "--out", "-o", help="Figure CSV (default: <results_dir>/<which>.csv)", dir_okay=False
        ),
    ] = None,
    output_format: Annotated[
        OutputFormat,
        typer.Option("--format", "-f", help="Output format", show_default=True),
    ] = OutputFormat.CSV,
    workers: Annotated[
        int | None,
        typer.Option("--workers", "-w", help="Concurrent trials (default from settings)", min=1),
    ] = None,
) -> None:
    """
    Bar-chart data (n, epsilon, mean, p95, success_rate) for a preset figure.

    Examples:
        sim figure --which fig1 --trials 200
        sim figure --which fig2 --in fig2_results.csv --out fig2.csv
    """
    try:
        preset = get_figure(which)
        if input_path is not None:
            results = read_results(input_path)
        else:
            results = run_with_progress(preset.grid(trials, seed), None, workers)
        if out is None:
            out = default_output(preset.name)
        emit(emit_figure_data(summarize(results), preset), preset.description, out, output_format)
    except LateConsensusError as e:
        fail(e)


@app.command()
def verify(
    check: Annotated[
        str,
        typer.Argument(help=f"Check to run ({', '.join(CHECKS)})", show_default=False),
    ],
    n: Annotated[
        int | None,
        typer.Option("--n", help="Number of nodes (default per check)", min=2),
    ] = None,
    trials: Annotated[
        int | None,
        typer.Option("--trials", "-t", help="Trials or samples (default per check)", min=1),
    ] = None,
    seed: Annotated[
        int,
        typer.Option("--seed", "-s", help="Master seed", min=0, show_default=True),
    ] = 0,
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Write the report CSV here", dir_okay=False),
    ] = None,
    output_format: Annotated[
        OutputFormat,
        typer.Option("--format", "-f", help="Output format", show_default=True),
    ] = OutputFormat.CSV,
) -> None:
    """
    Run a statistical check of the round dynamics; exit 3 when it fails.

    Examples:
        sim verify min-defined --trials 200
        sim verify drift --n 4096 --out drift.csv
        sim verify oracle --trials 100000
    """
    try:
        with err_console.status(f"Running {check}..."):
            report = run_check(check, n=n, trials=trials, seed=seed)
        emit(report.to_frame(), f"Verification: {check}", out, output_format)
        ensure_passed(report)
    except LateConsensusError as e:
        fail(e)
    print_success(f"{check}: all asserted rows passed")


@app.command()
def oracle(
    formula: Annotated[
        str,
        typer.Argument(help=f"Formula ({', '.join(FORMULAS)})", show_default=False),
    ],
    args: Annotated[
        list[str] | None,
        typer.Argument(help="Formula arguments in order", show_default=False),
    ] = None,
) -> None:
    """
    Evaluate a closed-form probability.

    Examples:
        sim oracle prob_receive_exactly 1000 750 6 0
        sim oracle prob_pick_zero 4096 2048
        sim oracle paley_zygmund 512 1398101 1/2
    """
    try:
        value = evaluate(formula, args or [])
    except LateConsensusError as e:
        fail(e)
    typer.echo(f"{value:.12g}")


@app.command()
def protocols() -> None:
    """List available protocols."""
    table = Table(title="Protocols", show_header=True, header_style="bold magenta")
    table.add_column("ID", style="cyan")
    table.add_column("Name", style="green")
    table.add_column("Description")
    for kind in ProtocolKind:
        table.add_row(kind.value, kind.display_name, kind.description)
    console.print(table)


@app.command()
def adversaries() -> None:
    """List available blocking strategies."""
    table = Table(title="Adversaries", show_header=True, header_style="bold magenta")
    table.add_column("ID", style="cyan")
    table.add_column("Description")
    for kind in AdversaryKind:
        table.add_row(kind.value, kind.description)
    console.print(table)


@app.command()
def settings() -> None:
    """Show current process-wide settings."""
    current = get_settings()
    table = Table(title="Current Settings", show_header=True, header_style="bold magenta")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")
    for name, value in current.model_dump().items():
        table.add_row(name, str(value))
    table.add_row("log file", str(current.get_log_path()))
    console.print(table)


@app.command()
def version() -> None:
    """Show version information."""
    print_banner()
    console.print(f"\n[dim]Python:[/dim] {sys.version.split()[0]}")
    console.print(f"[dim]Platform:[/dim] {sys.platform}")


def version_callback(value: bool) -> None:
    """Handle --version flag."""
    if value:
        console.print(f"lateconsensus {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: Annotated[
        bool | None,
        typer.Option(
            "--version", "-V",
            help="Show version and exit",
            callback=version_callback,
            is_eager=True,
        ),
    ] = None,
    debug: Annotated[
        bool,
        typer.Option(
            "--debug",
            help="Enable debug logging",
            envvar="LATECONSENSUS_DEBUG",
        ),
    ] = False,
) -> None:
    """
    Simulate consensus protocols against a late, budget-bounded blocking adversary.

    Get started:
        1. Run a cell: sim run --n 128 --epsilon 1/17 --trials 100
        2. Summarize it: sim summarize --in results.csv
        3. Check the dynamics: sim verify drift

    For more help, run: sim <command> --help
    """
    if debug:
        logging.basicConfig(
            level=logging.DEBUG,
            format="%(message)s",
            handlers=[RichHandler(console=err_console, rich_tracebacks=True)],
        )


if __name__ == "__main__":
    app()

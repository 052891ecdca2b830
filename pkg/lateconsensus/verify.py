"""
Monte Carlo checks of the binary protocol's round dynamics.

Each verifier builds exact start states, steps the engine, reads only the
resulting per-round records and emits a report with one row per parameter
point. A row carries the estimate, its confidence interval (normal
approximation with continuity correction), the threshold from ``Settings``
and whether it passed. Rows outside the regime a claim covers are reported
with ``passed`` left empty.
"""

from __future__ import annotations

import logging
import math
import statistics
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import norm

from lateconsensus.config import Settings, get_settings
from lateconsensus.engine import Simulation
from lateconsensus.exceptions import ConfigError, OutputError, VerificationError
from lateconsensus.farm import TrialFarm, TrialJob, completed_records
from lateconsensus.models import (
    AdversaryKind,
    RoundRecord,
    TrialConfig,
    validate_config,
)
from lateconsensus.oracle import prob_le2, prob_pick_zero
from lateconsensus.rng import derive_streams, trial_seed

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "check", "n", "parameter", "trials", "estimate", "ci_low", "ci_high",
    "threshold", "passed", "note",
]

# Below this many nodes the asymptotic claims are reported, never asserted.
ASYMPTOTIC_MIN_N = 256

DRIFT_FACTOR = Fraction(9, 8)
JUMP_CONSTANCY_WIDTHS = 3
CONTRACTION_FLOOR = 1.0
CONTRACTION_CHECK_FACTOR = 32


def proportion_ci(successes: int, total: int, confidence: float = 0.95) -> tuple[float, float]:
    """
    Normal-approximation interval for a proportion with continuity correction.

    Returns (0, 1) when there are no observations.
    """
    if total <= 0:
        return 0.0, 1.0
    p = successes / total
    z = float(norm.ppf(0.5 + confidence / 2))
    half = z * math.sqrt(p * (1 - p) / total) + 1 / (2 * total)
    return max(0.0, p - half), min(1.0, p + half)


@dataclass
class VerificationReport:
    """Rows of one verification check."""

    check: str
    rows: list[dict[str, Any]] = field(default_factory=list)

    def add(
        self,
        *,
        n: int,
        parameter: str,
        trials: int,
        estimate: float,
        ci: tuple[float, float] = (math.nan, math.nan),
        threshold: float | None = None,
        passed: bool | None = None,
        note: str = "",
    ) -> None:
        self.rows.append(
            {
                "check": self.check,
                "n": n,
                "parameter": parameter,
                "trials": trials,
                "estimate": estimate,
                "ci_low": ci[0],
                "ci_high": ci[1],
                "threshold": threshold,
                "passed": passed,
                "note": note,
            }
        )

    @property
    def passed(self) -> bool:
        """Whether every asserted row passed."""
        return all(row["passed"] is not False for row in self.rows)

    @property
    def failures(self) -> list[dict[str, Any]]:
        return [row for row in self.rows if row["passed"] is False]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=REPORT_COLUMNS)
        frame["passed"] = frame["passed"].astype("boolean")
        return frame

    def to_csv(self, path: Path | None = None) -> str:
        """CSV text of the report, also written to ``path`` when given."""
        text = self.to_frame().to_csv(index=False, lineterminator="\n")
        if path is not None:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text)
            except OSError as e:
                raise OutputError(f"Cannot write report: {e}", path=path) from e
        return text


def ensure_passed(report: VerificationReport) -> VerificationReport:
    """
    Raises:
        VerificationError: Naming the first failing row
    """
    if not report.passed:
        row = report.failures[0]
        raise VerificationError(
            f"n={row['n']} {row['parameter']}: estimate {row['estimate']:.4g} "
            f"vs threshold {row['threshold']}",
            check=report.check,
        )
    return report


def _clean_config(n: int, seed: int, **extra: Any) -> TrialConfig:
    """Binary (6,3) trial with no adversary and no decision tail."""
    values: dict[str, Any] = {
        "n": n,
        "epsilon": 0,
        "adversary": AdversaryKind.NONE,
        "track_decisions": False,
        "seed": seed,
    }
    values.update(extra)
    return validate_config(values)


def step_rounds(
    cfg: TrialConfig,
    rounds: int,
    inputs: np.ndarray | None = None,
    until: Callable[[RoundRecord], bool] | None = None,
) -> list[RoundRecord]:
    """Step a simulation ``rounds`` times, ignoring termination, or until ``until`` holds."""
    sim = Simulation(cfg, inputs)
    records: list[RoundRecord] = []
    for _ in range(rounds):
        record = sim.step_round()
        records.append(record)
        if until is not None and until(record):
            break
    return records


def _seeds(seed: int, trials: int) -> list[int]:
    return [trial_seed(seed, i) for i in range(trials)]


def verify_min_defined(
    n: int = 1024,
    epsilon: Fraction | str = Fraction(1, 16),
    trials: int = 1000,
    *,
    adversary: AdversaryKind = AdversaryKind.LATE_BALANCER,
    seed: int = 0,
    farm: TrialFarm | None = None,
    settings: Settings | None = None,
) -> VerificationReport:
    """
    Fraction of rounds ending with fewer than 3n/4 defined nodes.

    Asserted only for n ≥ 256 and ε ≤ 1/16.
    """
    settings = settings or get_settings()
    farm = farm or TrialFarm(settings=settings)
    jobs = [
        TrialJob(
            trial_id=i,
            config=validate_config({"n": n, "epsilon": epsilon, "adversary": adversary, "seed": s}),
            keep_trajectory=True,
        )
        for i, s in enumerate(_seeds(seed, trials))
    ]
    records = completed_records(farm.run_sync(jobs))

    floor = Fraction(3 * n, 4)
    rounds = violations = 0
    for record in records:
        assert record.trajectory is not None
        for r in record.trajectory:
            rounds += 1
            violations += r.n_t < floor
    rate = violations / rounds if rounds else 0.0
    eps = Fraction(epsilon)

    report = VerificationReport("min-defined")
    asserted = n >= ASYMPTOTIC_MIN_N and eps <= Fraction(1, 16)
    threshold = settings.min_defined_max_violation
    report.add(
        n=n,
        parameter=f"epsilon={eps}",
        trials=trials,
        estimate=rate,
        ci=proportion_ci(violations, rounds, settings.confidence),
        threshold=threshold,
        passed=(rate <= threshold) if asserted else None,
        note=f"{violations}/{rounds} rounds" + ("" if asserted else "; reporting only"),
    )
    logger.info(f"min-defined n={n} ε={eps}: {violations}/{rounds} rounds below 3n/4")
    return report


def drift_regime(n: int, c: float) -> float:
    """Smallest relative imbalance c·√(ln n / n) with a constant-factor drift."""
    return c * math.sqrt(math.log(n) / n)


def _drift_event(cfg: TrialConfig) -> bool:
    first, second = step_rounds(cfg, 2)
    return second.n_t > 0 and Fraction(second.delta, second.n_t) >= DRIFT_FACTOR * Fraction(
        first.delta, first.n_t
    )


def verify_drift(
    n: int = 4096,
    delta_grid: Sequence[float] = (0.01, 0.05, 0.1, 0.2, 0.25),
    trials: int = 10_000,
    *,
    seed: int = 0,
    farm: TrialFarm | None = None,
    settings: Settings | None = None,
) -> VerificationReport:
    """
    Frequency of δ_{t+1} ≥ (9/8)·δ_t after one round from relative imbalance δ.

    The start state holds n/2 + |δ|n ones, so Δ_1/n_1 = |δ| up to rounding;
    a negative δ is run mirrored. Points below c·√(ln n / n) (δ ≤ 0 included)
    are reported out of regime and points at or above 1/4 as the regime edge.
    Neither is asserted.

    Raises:
        ConfigError: If |δ| ≥ 1/2, which leaves no start state
    """
    settings = settings or get_settings()
    farm = farm or TrialFarm(settings=settings)
    lower = drift_regime(n, settings.regime_c)
    report = VerificationReport("drift")

    for delta in delta_grid:
        if not abs(delta) < 0.5:
            raise ConfigError(f"|δ| must be below 1/2, got {delta}", field="delta")
        bias = round(2 * abs(delta) * n)
        configs = [_clean_config(n, s, initial_bias=bias, max_rounds=2) for s in _seeds(seed, trials)]
        hits = sum(completed_records(farm.map_sync(_drift_event, configs)))

        estimate = hits / trials if trials else 0.0
        if delta <= 0:
            passed, note = None, "out of regime (δ ≤ 0" + ("; mirrored)" if delta < 0 else ")")
        elif delta < lower:
            passed, note = None, f"out of regime (δ < {lower:.4f})"
        elif delta >= 0.25:
            passed, note = None, "regime edge"
        elif n < ASYMPTOTIC_MIN_N:
            passed, note = None, "reporting only"
        else:
            passed, note = estimate >= settings.drift_min_frequency, ""
        if delta < lower:
            logger.warning(f"drift δ={delta} below regime edge {lower:.4f} at n={n}")
        report.add(
            n=n,
            parameter=f"delta={delta}",
            trials=trials,
            estimate=estimate,
            ci=proportion_ci(hits, trials, settings.confidence),
            threshold=settings.drift_min_frequency,
            passed=passed,
            note=note,
        )
    return report


def _jump_event(cfg: TrialConfig) -> bool:
    first, second = step_rounds(cfg, 2)
    return abs(second.delta) ** 2 >= Fraction(first.n_t, 16)


def estimate_jump(
    n: int = 4096,
    trials: int = 10_000,
    *,
    start_delta: int = 0,
    seed: int = 0,
    farm: TrialFarm | None = None,
    settings: Settings | None = None,
) -> VerificationReport:
    """
    Probability that one round moves |Δ| to at least √(n_t/16).

    Starts from Δ = ``start_delta`` (balanced by default) with no adversary.
    """
    settings = settings or get_settings()
    farm = farm or TrialFarm(settings=settings)
    if not 0 <= 2 * start_delta <= n:
        raise ConfigError(f"start Δ must lie in [0, n/2], got {start_delta}", field="start_delta")
    configs = [
        _clean_config(n, s, initial_bias=2 * start_delta, max_rounds=2)
        for s in _seeds(seed, trials)
    ]
    hits = sum(completed_records(farm.map_sync(_jump_event, configs)))
    alpha_hat = hits / trials if trials else 0.0

    report = VerificationReport("jump")
    asserted = start_delta == 0 and n >= ASYMPTOTIC_MIN_N
    report.add(
        n=n,
        parameter=f"start_delta={start_delta}",
        trials=trials,
        estimate=alpha_hat,
        ci=proportion_ci(hits, trials, settings.confidence),
        threshold=settings.jump_min_alpha,
        passed=(alpha_hat >= settings.jump_min_alpha) if asserted else None,
        note="" if asserted else "reporting only",
    )
    logger.info(f"jump n={n} Δ0={start_delta}: α̂={alpha_hat:.4f}")
    return report


def jump_constancy(reports: Sequence[VerificationReport]) -> VerificationReport:
    """
    Combine per-n jump reports and check that α̂ does not drift with n.

    Passes when every pair of estimates differs by less than three of the
    widest confidence interval.
    """
    combined = VerificationReport("jump")
    for report in reports:
        combined.rows.extend(report.rows)
    rows = [r for r in combined.rows if r["parameter"] == "start_delta=0"]
    if len(rows) >= 2:
        estimates = [r["estimate"] for r in rows]
        width = max(r["ci_high"] - r["ci_low"] for r in rows)
        spread = max(estimates) - min(estimates)
        combined.add(
            n=max(r["n"] for r in rows),
            parameter="constancy",
            trials=sum(r["trials"] for r in rows),
            estimate=spread,
            threshold=JUMP_CONSTANCY_WIDTHS * width,
            passed=spread < JUMP_CONSTANCY_WIDTHS * width,
            note=f"n ∈ {{{', '.join(str(r['n']) for r in rows)}}}",
        )
    return combined


@dataclass(frozen=True)
class ContractionRun:
    """Minority contraction of one trial."""

    rounds: int
    checked: int
    held: int


def _contraction(args: tuple[TrialConfig, float]) -> ContractionRun:
    cfg, floor = args
    n = cfg.n
    check_from = CONTRACTION_CHECK_FACTOR * math.log2(n)
    records = step_rounds(cfg, cfg.max_rounds, until=lambda r: r.x <= floor)
    checked = held = 0
    for before, after in zip(records, records[1:]):
        if before.x >= check_from and before.n_t:
            p = Fraction(before.x, before.n_t)
            checked += 1
            held += after.x <= 4 * p * p * after.n_t
    reached = next((r.round for r in records if r.x <= floor), records[-1].round)
    return ContractionRun(rounds=reached - 1, checked=checked, held=held)


def verify_case1_contraction(
    n: int = 4096,
    trials: int = 1000,
    *,
    p0: float = 1 / 8,
    seed: int = 0,
    farm: TrialFarm | None = None,
    settings: Settings | None = None,
) -> VerificationReport:
    """
    Rounds for a small minority of zeros to fall below C·log2 n.

    Starts with ⌊p0·n⌋ zeros and no adversary. While X_t ≥ 32·log2 n each
    round is checked against X_{t+1} ≤ 4·p_t²·n_{t+1}; the median number of
    rounds is compared with a·log2(log2 n) + b.
    """
    settings = settings or get_settings()
    farm = farm or TrialFarm(settings=settings)
    if not 0 <= p0 < 0.25:
        raise ConfigError(f"p0 must lie in [0, 1/4), got {p0}", field="p0")
    zeros = math.floor(p0 * n)
    floor = CONTRACTION_FLOOR * math.log2(n)
    items = [
        (_clean_config(n, s, initial_bias=n - 2 * zeros), floor) for s in _seeds(seed, trials)
    ]
    runs = completed_records(farm.map_sync(_contraction, items))

    report = VerificationReport("contraction")
    checked = sum(r.checked for r in runs)
    held = sum(r.held for r in runs)
    asserted = n >= ASYMPTOTIC_MIN_N
    report.add(
        n=n,
        parameter=f"p0={p0}",
        trials=trials,
        estimate=held / checked if checked else 1.0,
        ci=proportion_ci(held, checked, settings.confidence),
        threshold=settings.drift_min_frequency,
        passed=(not checked or held / checked >= settings.drift_min_frequency) if asserted else None,
        note=f"{held}/{checked} rounds with X_t ≥ {CONTRACTION_CHECK_FACTOR}·log2 n",
    )

    median = statistics.median(r.rounds for r in runs) if runs else 0.0
    bound = settings.contraction_a * math.log2(math.log2(n)) + settings.contraction_b
    report.add(
        n=n,
        parameter="median_rounds",
        trials=trials,
        estimate=float(median),
        threshold=bound,
        passed=(median <= bound) if asserted else None,
        note=f"a={settings.contraction_a}, b={settings.contraction_b}, X0={zeros}",
    )
    logger.info(f"contraction n={n}: median {median} rounds (bound {bound:.2f})")
    return report


DEFAULT_ORACLE_GRID: tuple[tuple[int, int, int], ...] = tuple(
    (n, n_t, x_t)
    for n in (256, 1000, 4096, 10_000)
    for n_t in (3 * n // 4, n)
    for x_t in (n_t // 8, n_t // 4, n_t // 2)
) + ((1000, 750, 0), (1000, 750, 750))


def _z_score(observed: int, total: int, p: float) -> float:
    if total == 0:
        return 0.0
    if p <= 0.0 or p >= 1.0:
        return 0.0 if observed == round(p * total) else math.inf
    return (observed / total - p) / math.sqrt(p * (1 - p) / total)


def verify_oracle(
    grid: Sequence[tuple[int, int, int]] = DEFAULT_ORACLE_GRID,
    samples: int = 1_000_000,
    *,
    k: int = 6,
    l: int = 3,  # noqa: E741
    seed: int = 0,
    settings: Settings | None = None,
) -> VerificationReport:
    """
    Compare sampled receive counts and adoption of 0 with the closed forms.

    For each (n, n_t, X_t) the X_t zero-holders and n_t − X_t one-holders each
    push k values to uniform destinations. A node's inbox then holds
    Binomial(k·X_t, 1/n) zeros and Binomial(k·(n_t − X_t), 1/n) ones; a node
    with at least ℓ values adopts 0 when most of ℓ values sampled without
    replacement are 0. Rows report the z-score and the raw gap.
    """
    settings = settings or get_settings()
    report = VerificationReport("oracle")
    for index, (n, n_t, x_t) in enumerate(grid):
        rng = derive_streams(trial_seed(seed, index), 0).engine
        zeros = rng.binomial(k * x_t, 1.0 / n, size=samples)
        ones = rng.binomial(k * (n_t - x_t), 1.0 / n, size=samples)
        received = zeros + ones

        starved = int(np.count_nonzero(received < l))
        expected = prob_le2(n, n_t, k) if l == 3 else math.nan
        z = _z_score(starved, samples, expected)
        report.add(
            n=n,
            parameter=f"receive_le2 n_t={n_t}",
            trials=samples,
            estimate=starved / samples,
            ci=proportion_ci(starved, samples, settings.confidence),
            threshold=expected,
            passed=abs(z) <= settings.oracle_sigma,
            note=f"z={z:.2f}",
        )

        defined = received >= l
        picked = rng.hypergeometric(zeros[defined], ones[defined], l)
        adopted = int(np.count_nonzero(2 * picked > l))
        trials = int(np.count_nonzero(defined))
        expected = prob_pick_zero(n_t, x_t, k, l)
        z = _z_score(adopted, trials, expected)
        gap = adopted / trials - expected if trials else math.nan
        report.add(
            n=n,
            parameter=f"pick_zero n_t={n_t} x_t={x_t}",
            trials=trials,
            estimate=adopted / trials if trials else math.nan,
            ci=proportion_ci(adopted, trials, settings.confidence),
            threshold=expected,
            passed=abs(z) <= settings.oracle_sigma,
            note=f"z={z:.2f}; gap={gap:+.2e}",
        )
    logger.info(f"oracle: {len(report.failures)} of {len(report.rows)} rows outside tolerance")
    return report


CHECKS = ("min-defined", "drift", "jump", "contraction", "oracle")


def run_check(
    check: str,
    *,
    n: int | None = None,
    trials: int | None = None,
    seed: int = 0,
    settings: Settings | None = None,
) -> VerificationReport:
    """
    Run a named check with its default parameter points.

    ``n`` and ``trials`` replace the defaults when given.

    Raises:
        ConfigError: For an unknown check name
    """
    settings = settings or get_settings()
    farm = TrialFarm(settings=settings)
    common: dict[str, Any] = {"seed": seed, "settings": settings}
    if check == "min-defined":
        return verify_min_defined(n or 1024, Fraction(1, 16), trials or 1000, farm=farm, **common)
    if check == "drift":
        return verify_drift(n or 4096, trials=trials or 2000, farm=farm, **common)
    if check == "jump":
        sizes = [n] if n else [1024, 4096]
        return jump_constancy(
            [estimate_jump(size, trials or 2000, farm=farm, **common) for size in sizes]
        )
    if check == "contraction":
        return verify_case1_contraction(n or 4096, trials or 1000, farm=farm, **common)
    if check == "oracle":
        return verify_oracle(samples=trials or 1_000_000, **common)
    raise ConfigError(f"Unknown check: {check} (choose from {', '.join(CHECKS)})", field="check")


__all__ = [
    "CHECKS",
    "VerificationReport",
    "ensure_passed",
    "estimate_jump",
    "jump_constancy",
    "proportion_ci",
    "run_check",
    "step_rounds",
    "verify_case1_contraction",
    "verify_drift",
    "verify_min_defined",
    "verify_oracle",
]

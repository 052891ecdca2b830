"""
Core domain types for lateconsensus.

Provides validated, immutable records for:
- Node values (binary with the reset value, multi-value with a minimum sentinel)
- Trial configuration and its invariants
- System snapshots observed by the adversary
- Messages, per-round trajectory records and trial results
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Annotated, Any

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    ValidationError,
    field_validator,
    model_validator,
)

from lateconsensus.exceptions import ConfigError

NodeId = int

# Multi-value domain: inputs are non-negative integers, BOT sorts below all of them.
MultiValue = int
MV_BOT: MultiValue = -1

# Marker for "no output yet" in decided arrays.
NO_OUTPUT = -1

TRAJECTORY_COLUMNS = [
    "round", "X", "Y", "n_t", "bot", "delta", "blocked", "decided_0", "decided_1",
]


def _parse_fraction(value: Any) -> Fraction:
    """Accept '1/16', '0.0625', 1, 0.0625 or a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("ε must be a number")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"cannot parse rational {value!r}") from e
    raise ValueError(f"cannot parse rational {value!r}")


Rational = Annotated[
    Fraction,
    BeforeValidator(_parse_fraction),
    PlainSerializer(str, return_type=str, when_used="json"),
]


class BinaryValue(IntEnum):
    """Value held by a node of the binary protocol."""

    ZERO = 0
    ONE = 1
    UNDEFINED = -1  # the reset value ⊥

    @property
    def symbol(self) -> str:
        """Short printable form."""
        return "⊥" if self is BinaryValue.UNDEFINED else str(int(self))


class ProtocolKind(str, Enum):
    """Protocols the engine can run."""

    BINARY = "binary"
    MULTIVALUE = "multivalue"
    MEDIAN = "median"

    @property
    def display_name(self) -> str:
        """Human-readable protocol name."""
        names = {
            self.BINARY: "(k,ℓ)-majority",
            self.MULTIVALUE: "Multi-value max spreading",
            self.MEDIAN: "Median rule (pull)",
        }
        return names.get(self, self.value)

    @property
    def description(self) -> str:
        """Protocol description."""
        descriptions = {
            self.BINARY: "Push k copies, adopt the majority of ℓ sampled values, reset on starvation",
            self.MULTIVALUE: "Random activation, wide first push, then fanout-2 max rule",
            self.MEDIAN: "Pull two peers and adopt the median of three values",
        }
        return descriptions.get(self, "")


class AdversaryKind(str, Enum):
    """Blocking strategies."""

    NONE = "none"
    RANDOM = "random"
    LATE_BALANCER = "late-balancer"
    STRONG_BALANCER = "strong-balancer"

    @property
    def description(self) -> str:
        """Strategy description."""
        descriptions = {
            self.NONE: "Never blocks",
            self.RANDOM: "Blocks a uniformly random set of budget size",
            self.LATE_BALANCER: "Blocks the lowest-id holders of the observed majority",
            self.STRONG_BALANCER: "Sees this round's coins and greedily minimises |Δ|",
        }
        return descriptions.get(self, "")

    @property
    def needs_binary_values(self) -> bool:
        """Whether the strategy reads 0/1 values from the snapshot."""
        return self in (AdversaryKind.LATE_BALANCER, AdversaryKind.STRONG_BALANCER)


class BlockingModel(str, Enum):
    """What blocking a node in round t does to the messages around it."""

    RECEIVE = "receive"  # inbox dropped, nothing sent in round t
    WITHHOLD = "withhold"  # also drops the node's round t − 1 sends still in flight

    @property
    def description(self) -> str:
        descriptions = {
            self.RECEIVE: "Blocked nodes lose their inbox and send nothing this round",
            self.WITHHOLD: "Blocked nodes also withhold the messages they sent last round",
        }
        return descriptions.get(self, "")


class LogBase(str, Enum):
    """Base of the logarithm in the log n terms."""

    TWO = "2"
    E = "e"

    def log(self, x: float) -> float:
        """Logarithm of x in this base."""
        return math.log2(x) if self is LogBase.TWO else math.log(x)


class OutcomeKind(str, Enum):
    """Terminal condition of a trial."""

    SUCCESS = "success"
    ADVERSARY_WIN = "adversary-win"
    TIMEOUT = "timeout"


class Outcome(BaseModel):
    """Trial outcome: consensus on a value, adversary win, or timeout."""

    model_config = ConfigDict(frozen=True)

    kind: OutcomeKind
    value: int | None = None

    @classmethod
    def consensus(cls, value: int) -> Outcome:
        """Outcome reaching agreement on ``value``."""
        return cls(kind=OutcomeKind.SUCCESS, value=value)

    @property
    def succeeded(self) -> bool:
        """Whether the trial reached agreement."""
        return self.kind is OutcomeKind.SUCCESS

    def __str__(self) -> str:
        if self.kind is OutcomeKind.SUCCESS:
            return f"ConsensusOn({self.value})"
        if self.kind is OutcomeKind.ADVERSARY_WIN:
            return "AdversaryWin"
        return "Timeout"


DEFAULT_N = 1024


class TrialConfig(BaseModel):
    """Parameters of a single trial."""

    model_config = ConfigDict(
        frozen=True,
        arbitrary_types_allowed=True,
        extra="forbid",
    )

    n: int = Field(default=DEFAULT_N, ge=2, description="Number of nodes")
    epsilon: Rational = Field(
        default=Fraction(1, 16),
        description="Fraction of nodes the adversary may block per round",
    )
    protocol: ProtocolKind = Field(default=ProtocolKind.BINARY)
    k: int = Field(default=6, ge=1, description="Push fanout of the binary protocol")
    l: int = Field(default=3, ge=1, description="Sample size of the binary protocol")  # noqa: E741
    alpha: float = Field(default=2.0, gt=0.0, description="Decision window constant")
    c1: float = Field(default=4.0, gt=0.0, description="Activation constant")
    c2: float = Field(default=4.0, gt=0.0, description="First-round fanout constant")
    c3: float = Field(default=4.0, gt=0.0, description="Iteration count constant")
    c4: float = Field(default=2.0, gt=0.0, description="Steady-window constant")
    log_base: LogBase = Field(default=LogBase.TWO)
    adversary: AdversaryKind = Field(default=AdversaryKind.LATE_BALANCER)
    lateness: int = Field(default=1, ge=0, description="Staleness of the adversary's view")
    blocking: BlockingModel = Field(default=BlockingModel.RECEIVE)
    max_rounds: int = Field(description="Round cap (default 40·log2 n)")
    seed: int = Field(default=0, ge=0, lt=2**64)
    blocked_reset_mv: bool = Field(
        default=True,
        description="Blocked multi-value nodes reset to ⊥ during spreading",
    )
    initial_bias: int = Field(default=0, ge=0, description="Surplus of ones in the input")
    track_decisions: bool = Field(
        default=True,
        description="Keep running one decision window after agreement",
    )
    value_domain: int | None = Field(
        default=None,
        ge=1,
        description="Default multi-value inputs are node id modulo this (default n)",
    )
    mv_uniform_start: bool = Field(
        default=False,
        description="Round-1 active nodes contact 2 peers instead of ⌈c2 log n⌉",
    )

    @model_validator(mode="before")
    @classmethod
    def default_round_cap(cls, data: Any) -> Any:
        """Fill max_rounds with 40·log2 n when absent."""
        if isinstance(data, Mapping) and data.get("max_rounds") in (None, ""):
            data = dict(data)
            try:
                n = int(data.get("n", DEFAULT_N))
            except (TypeError, ValueError):
                n = DEFAULT_N
            data["max_rounds"] = math.ceil(40 * math.log2(max(n, 2)))
        return data

    @model_validator(mode="after")
    def check_invariants(self) -> TrialConfig:
        """Enforce the invariants, first violation wins."""
        if self.l % 2 == 0:
            raise ValueError("ℓ must be odd")
        if self.k < self.l:
            raise ValueError("k must be at least ℓ")
        if not 0 <= self.epsilon < 1:
            raise ValueError("ε out of range")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.initial_bias > self.n:
            raise ValueError("initial_bias cannot exceed n")
        if self.adversary is AdversaryKind.STRONG_BALANCER and self.lateness != 0:
            raise ValueError("strong-balancer requires lateness 0")
        strong = self.adversary is AdversaryKind.STRONG_BALANCER
        if strong and self.blocking is BlockingModel.WITHHOLD:
            raise ValueError("strong-balancer previews the round under the receive model only")
        if self.protocol is ProtocolKind.MULTIVALUE and self.adversary.needs_binary_values:
            raise ValueError(f"{self.adversary.value} observes binary values only")
        if self.protocol is ProtocolKind.MULTIVALUE and self.max_rounds < 1 + self.mv_iterations:
            raise ValueError(
                f"max_rounds must cover the {1 + self.mv_iterations} multi-value rounds"
            )
        return self

    @property
    def budget(self) -> int:
        """Blocking budget ⌊εn⌋."""
        return math.floor(self.epsilon * self.n)

    def log(self, x: float) -> float:
        """Logarithm in the configured base."""
        return self.log_base.log(x)

    @property
    def decision_window(self) -> int:
        """W = ⌈α ln n⌉; always natural log."""
        return max(1, math.ceil(self.alpha * math.log(self.n)))

    @property
    def activation_probability(self) -> float:
        """min(1, c1·log n / n)."""
        return min(1.0, self.c1 * self.log(self.n) / self.n)

    @property
    def initial_fanout(self) -> int:
        """Round-1 fanout of active multi-value nodes."""
        if self.mv_uniform_start:
            return 2
        return math.ceil(self.c2 * self.log(self.n))

    @property
    def mv_iterations(self) -> int:
        """⌈c3·log n⌉ spreading iterations."""
        return max(1, math.ceil(self.c3 * self.log(self.n)))

    @property
    def steady_window(self) -> int:
        """⌈c4·log n⌉ trailing iterations used for steady-node accounting."""
        return min(self.mv_iterations, math.ceil(self.c4 * self.log(self.n)))

    @property
    def success_margin(self) -> Fraction:
        """|X − Y| threshold (2/3 − ε)n for agreement."""
        return (Fraction(2, 3) - self.epsilon) * self.n


def validate_config(cfg: TrialConfig | Mapping[str, Any]) -> TrialConfig:
    """
    Check every TrialConfig invariant.

    Args:
        cfg: A config instance or raw key/value mapping

    Returns:
        The config itself when given an instance, otherwise the validated model

    Raises:
        ConfigError: Carrying the first violated invariant
    """
    data = cfg.model_dump() if isinstance(cfg, TrialConfig) else dict(cfg)
    try:
        checked = TrialConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        error = first.get("ctx", {}).get("error")
        message = str(error) if error else first["msg"]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(message, field=field) from None
    return cfg if isinstance(cfg, TrialConfig) else checked


def epsilon_for_budget(n: int, budget: int) -> Fraction:
    """Exact ε with ⌊εn⌋ = budget."""
    if not 0 <= budget < n:
        raise ConfigError(f"budget must lie in [0, {n})", field="budget")
    return Fraction(budget, n)


def _frozen_array(value: Any, dtype: Any) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class SystemSnapshot(BaseModel):
    """Per-node state at the start of a round; read-only once taken."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    round: int = Field(ge=1)
    values: np.ndarray
    blocked_now: np.ndarray
    active: np.ndarray | None = None
    decided: np.ndarray

    @field_validator("values", "decided", mode="before")
    @classmethod
    def freeze_int_array(cls, v: Any) -> np.ndarray:
        return _frozen_array(v, np.int64)

    @field_validator("blocked_now", "active", mode="before")
    @classmethod
    def freeze_bool_array(cls, v: Any) -> np.ndarray | None:
        return None if v is None else _frozen_array(v, bool)

    @model_validator(mode="after")
    def check_lengths(self) -> SystemSnapshot:
        n = len(self.values)
        arrays = [self.blocked_now, self.decided]
        if self.active is not None:
            arrays.append(self.active)
        if any(len(a) != n for a in arrays):
            raise ValueError("snapshot arrays must all have length n")
        return self

    @property
    def n(self) -> int:
        return len(self.values)

    def binary_counts(self) -> tuple[int, int, int]:
        """(zeros, ones, undefined) among the snapshot values."""
        zeros = int(np.count_nonzero(self.values == BinaryValue.ZERO))
        ones = int(np.count_nonzero(self.values == BinaryValue.ONE))
        return zeros, ones, self.n - zeros - ones


class Message(BaseModel):
    """A single point-to-point message."""

    model_config = ConfigDict(frozen=True)

    sender: NodeId = Field(ge=0)
    receiver: NodeId = Field(ge=0)
    payload: int
    sent_round: int = Field(ge=1)


@dataclass(frozen=True, slots=True)
class Sends:
    """Copies of one payload addressed to a list of destinations."""

    payload: int
    destinations: np.ndarray

    @classmethod
    def none(cls) -> Sends:
        return cls(payload=NO_OUTPUT, destinations=np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.destinations)

    def to_messages(self, sender: NodeId, sent_round: int) -> list[Message]:
        """Expand into individual messages."""
        return [
            Message(sender=sender, receiver=int(d), payload=self.payload, sent_round=sent_round)
            for d in self.destinations
        ]


class RoundRecord(BaseModel):
    """End-of-round aggregates."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    round: int = Field(ge=1)
    x: int = Field(ge=0, description="Nodes holding 0 (multi-value: defined non-max holders)")
    y: int = Field(ge=0, description="Nodes holding 1 (multi-value: holders of the max)")
    n_t: int = Field(ge=0)
    bot: int = Field(ge=0)
    delta: Fraction
    blocked: int = Field(ge=0)
    decided_0: int = Field(default=0, ge=0, description="Cumulative outputs of 0")
    decided_1: int = Field(default=0, ge=0, description="Cumulative outputs of 1")
    messages: int = Field(default=0, ge=0, description="Messages sent this round")

    @model_validator(mode="after")
    def check_balance(self) -> RoundRecord:
        if self.x + self.y != self.n_t:
            raise ValueError("X + Y must equal n_t")
        if self.delta != Fraction(self.y - self.x, 2):
            raise ValueError("Δ must equal (Y − X)/2")
        return self

    @classmethod
    def from_counts(
        cls,
        round: int,
        x: int,
        y: int,
        bot: int,
        blocked: int,
        **extra: int,
    ) -> RoundRecord:
        return cls(
            round=round,
            x=x,
            y=y,
            n_t=x + y,
            bot=bot,
            delta=Fraction(y - x, 2),
            blocked=blocked,
            **extra,
        )

    @property
    def relative_delta(self) -> float:
        """δ_t = Δ_t / n_t (0 when no node is defined)."""
        return float(self.delta / self.n_t) if self.n_t else 0.0


class Trajectory(BaseModel):
    """Per-round records of one trial."""

    model_config = ConfigDict(frozen=True)

    records: list[RoundRecord] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[RoundRecord]:  # type: ignore[override]
        """Iterate over records (overrides pydantic's field iterator)."""
        return iter(self.records)

    def __getitem__(self, index: int) -> RoundRecord:
        return self.records[index]

    @property
    def last(self) -> RoundRecord | None:
        return self.records[-1] if self.records else None

    def to_frame(self) -> pd.DataFrame:
        """Records in the dump layout."""
        rows = [
            {
                "round": r.round,
                "X": r.x,
                "Y": r.y,
                "n_t": r.n_t,
                "bot": r.bot,
                "delta": str(r.delta),
                "blocked": r.blocked,
                "decided_0": r.decided_0,
                "decided_1": r.decided_1,
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)

    def to_csv(self) -> str:
        """One CSV row per round."""
        return self.to_frame().to_csv(index=False, lineterminator="\n")


class TrialResult(BaseModel):
    """Outcome and accounting of one trial."""

    model_config = ConfigDict(frozen=True)

    outcome: Outcome
    rounds: int = Field(ge=0, description="Round at which the trial terminated")
    rounds_executed: int = Field(ge=0)
    final_counts: dict[str, int] = Field(description="Histogram of final values, ⊥ as 'bot'")
    decisions: dict[NodeId, tuple[int, int]] = Field(
        default_factory=dict,
        description="Node → (output value, round of output)",
    )
    loss: int = Field(ge=0, description="Nodes not deciding the agreed value")
    initial_majority: int | None = None
    x_star: int | None = None
    agree_x_star: int | None = None
    validity_violations: int = Field(default=0, ge=0)
    conflicting_outputs: int = Field(default=0, ge=0)
    messages: int = Field(default=0, ge=0)
    steady_nodes: int | None = None

    @property
    def succeeded(self) -> bool:
        return self.outcome.succeeded

    @property
    def decided_count(self) -> int:
        return len(self.decisions)

    @property
    def final_bot(self) -> int:
        return self.final_counts.get("bot", 0)

    @property
    def final_majority(self) -> int | None:
        """Most common defined final value (ties → smallest)."""
        defined = [(count, -int(v)) for v, count in self.final_counts.items() if v != "bot"]
        defined = [item for item in defined if item[0] > 0]
        if not defined:
            return None
        return -max(defined)[1]

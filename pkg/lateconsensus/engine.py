"""
Synchronous round engine.

Each round t runs in a fixed order:
1. the adversary observes the snapshot taken at the start of round
   max(1, t − lateness) (plus a preview of round t when lateness is 0)
   and returns B_t;
2. messages sent in round t − 1 are delivered unless the receiver is in B_t
   (under the withhold model, unless the sender is in B_t as well);
3. binary and median nodes draw a fixed block of coins from their own
   streams, blocked or not (multi-value nodes draw as they act);
4. nodes step, blocked nodes taking their blocked transition;
5. their outgoing messages are buffered for round t + 1.

Messages that are not delivered are dropped, never buffered.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections import Counter
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from lateconsensus.adversary import (
    AdversaryObservation,
    BlockSet,
    PendingRound,
    get_strategy,
)
from lateconsensus.exceptions import BudgetExceededError, ConfigError
from lateconsensus.models import (
    MV_BOT,
    NO_OUTPUT,
    AdversaryKind,
    BinaryValue,
    BlockingModel,
    Message,
    Outcome,
    OutcomeKind,
    ProtocolKind,
    RoundRecord,
    Sends,
    SystemSnapshot,
    Trajectory,
    TrialConfig,
    TrialResult,
    validate_config,
)
from lateconsensus.protocols.binary import (
    DecisionWindow,
    destinations_from,
    round_one_all,
    step_all,
)
from lateconsensus.protocols.median import PULLS, median_of_three
from lateconsensus.protocols.multivalue import (
    MultiNodeState,
    message_budget,
    mv_decide,
    mv_init,
    mv_step,
)
from lateconsensus.rng import TrialStreams, derive_streams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MessageBatch:
    """Messages sent in one round, stored column-wise."""

    senders: np.ndarray
    receivers: np.ndarray
    payloads: np.ndarray
    sent_round: int

    @classmethod
    def empty(cls, sent_round: int = 0) -> MessageBatch:
        none = np.empty(0, dtype=np.int64)
        return cls(senders=none, receivers=none, payloads=none, sent_round=sent_round)

    @classmethod
    def collect(cls, outgoing: Sequence[tuple[int, Sends]], sent_round: int) -> MessageBatch:
        """Flatten per-node sends into one batch."""
        outgoing = [(u, s) for u, s in outgoing if len(s)]
        if not outgoing:
            return cls.empty(sent_round)
        lengths = [len(s) for _, s in outgoing]
        return cls(
            senders=np.repeat(np.array([u for u, _ in outgoing], dtype=np.int64), lengths),
            receivers=np.concatenate([s.destinations for _, s in outgoing]),
            payloads=np.repeat(np.array([s.payload for _, s in outgoing], dtype=np.int64), lengths),
            sent_round=sent_round,
        )

    @classmethod
    def push(
        cls,
        senders: np.ndarray,
        destinations: np.ndarray,
        payloads: np.ndarray,
        sent_round: int,
    ) -> MessageBatch:
        """``senders[i]`` sends ``payloads[i]`` to each entry of row ``destinations[i]``."""
        if not len(senders):
            return cls.empty(sent_round)
        fanout = destinations.shape[1]
        return cls(
            senders=np.repeat(np.asarray(senders, dtype=np.int64), fanout),
            receivers=np.asarray(destinations, dtype=np.int64).reshape(-1),
            payloads=np.repeat(np.asarray(payloads, dtype=np.int64), fanout),
            sent_round=sent_round,
        )

    def __len__(self) -> int:
        return len(self.receivers)

    def deliverable(self, blocked: np.ndarray, withheld: np.ndarray | None = None) -> MessageBatch:
        """Messages whose receiver is not blocked and whose sender is not in ``withheld``."""
        keep = ~blocked[self.receivers]
        if withheld is not None:
            keep &= ~withheld[self.senders]
        return MessageBatch(
            senders=self.senders[keep],
            receivers=self.receivers[keep],
            payloads=self.payloads[keep],
            sent_round=self.sent_round,
        )

    def messages(self) -> Iterator[Message]:
        for s, r, p in zip(self.senders, self.receivers, self.payloads, strict=True):
            yield Message(sender=int(s), receiver=int(r), payload=int(p), sent_round=self.sent_round)


def check_termination(record: RoundRecord, cfg: TrialConfig) -> Outcome | None:
    """
    Terminal condition after a binary round; ``None`` means continue.

    Success (|X − Y| ≥ (2/3 − ε)n) is checked before the adversary-win
    condition (⊥-count ≥ ⌈n/2⌉).
    """
    if abs(record.x - record.y) >= cfg.success_margin:
        value = BinaryValue.ZERO if record.x > record.y else BinaryValue.ONE
        return Outcome.consensus(int(value))
    if 2 * record.bot >= cfg.n:
        return Outcome(kind=OutcomeKind.ADVERSARY_WIN)
    if record.round >= cfg.max_rounds:
        return Outcome(kind=OutcomeKind.TIMEOUT)
    return None


def balanced_inputs(n: int, bias: int) -> np.ndarray:
    """⌈(n+s)/2⌉ ones on the lowest ids, ⌊(n−s)/2⌋ zeros after them."""
    ones = -(-(n + bias) // 2)
    inputs = np.zeros(n, dtype=np.int64)
    inputs[:ones] = BinaryValue.ONE
    return inputs


class _Driver(ABC):
    """Protocol-specific half of the engine."""

    def __init__(self, cfg: TrialConfig, streams: TrialStreams, inputs: np.ndarray) -> None:
        self.cfg = cfg
        self.streams = streams
        self.inputs = inputs
        self.values = inputs.copy()
        self.active: np.ndarray | None = None
        self.decided = np.full(cfg.n, NO_OUTPUT, dtype=np.int64)
        self._coins: tuple[int, np.ndarray] | None = None

    def coin_width(self, t: int) -> int:
        """Uniforms each node draws in round t; 0 for drivers that draw per node."""
        return 0

    def coins_for(self, t: int) -> np.ndarray:
        """
        The (n, width) coin block of round t, one row per node.

        Drawn once per round; a preview and the round itself see the same coins.
        """
        if self._coins is None or self._coins[0] != t:
            width = self.coin_width(t)
            block = np.stack([g.random(width) for g in self.streams.nodes])
            self._coins = (t, block)
        return self._coins[1]

    @abstractmethod
    def preview(self, t: int, inbox: MessageBatch) -> PendingRound:
        """Current-round outcome per node if nobody were blocked."""

    @abstractmethod
    def play(self, t: int, inbox: MessageBatch, blocked: np.ndarray) -> MessageBatch:
        """Run every node for round t and return what they send."""

    @abstractmethod
    def record(self, t: int, blocked: int, sent: int) -> RoundRecord:
        """Aggregate the end-of-round state."""

    def binary_counts(self) -> tuple[int, int, int]:
        zeros = int(np.count_nonzero(self.values == BinaryValue.ZERO))
        ones = int(np.count_nonzero(self.values == BinaryValue.ONE))
        return zeros, ones, self.cfg.n - zeros - ones

    def final_counts(self) -> dict[str, int]:
        counts = Counter(int(v) for v in self.values)
        out = {str(v): c for v, c in sorted(counts.items()) if v != BinaryValue.UNDEFINED}
        out["bot"] = counts.get(-1, 0)
        return out


class _BinaryDriver(_Driver):
    def __init__(self, cfg: TrialConfig, streams: TrialStreams, inputs: np.ndarray) -> None:
        super().__init__(cfg, streams, inputs)
        self.window = DecisionWindow(cfg.n, cfg.decision_window)
        self.decided = self.window.output

    def coin_width(self, t: int) -> int:
        return self.cfg.k if t == 1 else self.cfg.l + self.cfg.k

    def _inbox_counts(self, inbox: MessageBatch) -> tuple[np.ndarray, np.ndarray]:
        n = self.cfg.n
        zeros = np.bincount(inbox.receivers[inbox.payloads == BinaryValue.ZERO], minlength=n)
        ones = np.bincount(inbox.receivers[inbox.payloads == BinaryValue.ONE], minlength=n)
        return zeros, ones

    def _advance(
        self, t: int, inbox: MessageBatch, blocked: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        coins = self.coins_for(t)
        if t == 1:
            return round_one_all(self.inputs, blocked, coins, self.cfg)
        zeros, ones = self._inbox_counts(inbox)
        return step_all(zeros, ones, blocked, coins, self.cfg)

    def preview(self, t: int, inbox: MessageBatch) -> PendingRound:
        predicted, _ = self._advance(t, inbox, np.zeros(self.cfg.n, dtype=bool))
        fallback = np.full(self.cfg.n, BinaryValue.UNDEFINED, dtype=np.int64)
        return PendingRound(predicted=predicted, fallback=fallback)

    def play(self, t: int, inbox: MessageBatch, blocked: np.ndarray) -> MessageBatch:
        values, destinations = self._advance(t, inbox, blocked)
        self.values = values
        self.window.record(values, t)
        senders = np.flatnonzero(values != BinaryValue.UNDEFINED)
        return MessageBatch.push(senders, destinations[senders], values[senders], t)

    def record(self, t: int, blocked: int, sent: int) -> RoundRecord:
        x, y, bot = self.binary_counts()
        return RoundRecord.from_counts(
            t, x, y, bot, blocked,
            decided_0=int(np.count_nonzero(self.decided == BinaryValue.ZERO)),
            decided_1=int(np.count_nonzero(self.decided == BinaryValue.ONE)),
            messages=sent,
        )

    @property
    def all_decided(self) -> bool:
        return bool(np.all(self.decided != NO_OUTPUT))

    def decisions(self) -> dict[int, tuple[int, int]]:
        return self.window.decisions()


class _MedianDriver(_Driver):
    def __init__(self, cfg: TrialConfig, streams: TrialStreams, inputs: np.ndarray) -> None:
        super().__init__(cfg, streams, inputs)
        self.exchanges = 0

    def coin_width(self, t: int) -> int:
        return PULLS

    def preview(self, t: int, inbox: MessageBatch) -> PendingRound:
        targets = destinations_from(self.coins_for(t), self.cfg.n)
        predicted = median_of_three(self.values, self.values[targets])
        return PendingRound(predicted=predicted, fallback=self.values.copy(), depends_on=targets)

    def play(self, t: int, inbox: MessageBatch, blocked: np.ndarray) -> MessageBatch:
        start = self.values.copy()
        targets = destinations_from(self.coins_for(t), self.cfg.n)
        pulling = ~blocked
        answered = pulling[:, None] & ~blocked[targets]
        complete = answered.all(axis=1)
        self.values = np.where(complete, median_of_three(start, start[targets]), start)
        self.exchanges = PULLS * int(np.count_nonzero(pulling)) + int(np.count_nonzero(answered))
        # Pull exchanges complete inside the round; nothing is carried over.
        return MessageBatch.empty(t)

    def record(self, t: int, blocked: int, sent: int) -> RoundRecord:
        x, y, bot = self.binary_counts()
        return RoundRecord.from_counts(t, x, y, bot, blocked, messages=self.exchanges)


class _MultiValueDriver(_Driver):
    def __init__(self, cfg: TrialConfig, streams: TrialStreams, inputs: np.ndarray) -> None:
        super().__init__(cfg, streams, inputs)
        self.states: list[MultiNodeState] = []
        self.active = np.zeros(cfg.n, dtype=bool)
        self.x_star: int | None = None
        self.activated = 0
        self.blocked_history: list[np.ndarray] = []

    def preview(self, t: int, inbox: MessageBatch) -> PendingRound:
        raise ConfigError("multi-value trials cannot use a current-round adversary")

    def play(self, t: int, inbox: MessageBatch, blocked: np.ndarray) -> MessageBatch:
        n = self.cfg.n
        outgoing: list[tuple[int, Sends]] = []
        if t == 1:
            for u in range(n):
                state, sends = mv_init(int(self.inputs[u]), bool(blocked[u]), self.streams.nodes[u], self.cfg)
                self.states.append(state)
                outgoing.append((u, sends))
            holders = [s.value for s in self.states if s.active]
            self.activated = len(holders)
            self.x_star = max(holders) if holders else None
        else:
            self.blocked_history.append(blocked.copy())
            received = _group_by_receiver(inbox, n)
            for u in range(n):
                state, sends = mv_step(
                    self.states[u],
                    received.get(u, ()),
                    bool(blocked[u]),
                    t - 1,
                    self.streams.nodes[u],
                    self.cfg,
                )
                self.states[u] = state
                outgoing.append((u, sends))
        self.values = np.array([s.value for s in self.states], dtype=np.int64)
        self.active = np.array([s.active for s in self.states], dtype=bool)
        return MessageBatch.collect(outgoing, t)

    def record(self, t: int, blocked: int, sent: int) -> RoundRecord:
        defined = self.values != MV_BOT
        n_t = int(np.count_nonzero(defined))
        top = int(self.values.max())
        y = int(np.count_nonzero(self.values == top)) if top != MV_BOT else 0
        return RoundRecord.from_counts(t, n_t - y, y, self.cfg.n - n_t, blocked, messages=sent)

    def decisions(self, round: int) -> dict[int, tuple[int, int]]:
        return {
            u: (mv_decide(s), round) for u, s in enumerate(self.states) if mv_decide(s) != MV_BOT
        }

    def steady_nodes(self) -> int:
        window = self.blocked_history[-self.cfg.steady_window :]
        if not window:
            return self.cfg.n
        return int(np.count_nonzero(~np.any(np.stack(window), axis=0)))

    def final_counts(self) -> dict[str, int]:
        counts = Counter(int(v) for v in self.values)
        out = {str(v): c for v, c in sorted(counts.items()) if v != MV_BOT}
        out["bot"] = counts.get(MV_BOT, 0)
        return out


def _group_by_receiver(batch: MessageBatch, n: int) -> dict[int, np.ndarray]:
    if not len(batch):
        return {}
    order = np.argsort(batch.receivers, kind="stable")
    receivers = batch.receivers[order]
    payloads = batch.payloads[order]
    uniq, starts = np.unique(receivers, return_index=True)
    return dict(zip(uniq.tolist(), np.split(payloads, starts[1:]), strict=True))


_DRIVERS: dict[ProtocolKind, type[_Driver]] = {
    ProtocolKind.BINARY: _BinaryDriver,
    ProtocolKind.MEDIAN: _MedianDriver,
    ProtocolKind.MULTIVALUE: _MultiValueDriver,
}


class Simulation:
    """
    One trial, advanced round by round.

    Example:
        sim = Simulation(TrialConfig(n=128, epsilon="1/17"))
        result, trajectory = sim.run()
    """

    def __init__(self, cfg: TrialConfig, inputs: Sequence[int] | np.ndarray | None = None) -> None:
        self.cfg = validate_config(cfg)
        self.streams = derive_streams(cfg.seed, cfg.n)
        self.strategy = get_strategy(cfg.adversary)
        self.inputs = self._resolve_inputs(inputs)
        self.driver = _DRIVERS[cfg.protocol](cfg, self.streams, self.inputs.copy())
        self.round = 0
        self.outbox = MessageBatch.empty()
        self.blocked = np.zeros(cfg.n, dtype=bool)
        self.records: list[RoundRecord] = []
        self.messages_sent = 0
        self.messages_delivered = 0
        self.messages_dropped = 0
        self._snapshots: dict[int, SystemSnapshot] = {1: self.snapshot()}

    def _resolve_inputs(self, inputs: Sequence[int] | np.ndarray | None) -> np.ndarray:
        cfg = self.cfg
        if inputs is not None:
            arr = np.asarray(inputs, dtype=np.int64)
            if arr.shape != (cfg.n,):
                raise ConfigError(f"expected {cfg.n} inputs, got {arr.size}", field="inputs")
            if cfg.protocol is ProtocolKind.MULTIVALUE:
                if np.any(arr < 0):
                    raise ConfigError("multi-value inputs must be non-negative", field="inputs")
            elif not np.all((arr == 0) | (arr == 1)):
                raise ConfigError("binary inputs must be 0 or 1", field="inputs")
            return arr
        if cfg.protocol is ProtocolKind.MULTIVALUE:
            return np.arange(cfg.n, dtype=np.int64) % (cfg.value_domain or cfg.n)
        return balanced_inputs(cfg.n, cfg.initial_bias)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(records=list(self.records))

    def snapshot(self) -> SystemSnapshot:
        """State at the start of the next round."""
        return SystemSnapshot(
            round=self.round + 1,
            values=self.driver.values,
            blocked_now=self.blocked,
            active=self.driver.active,
            decided=self.driver.decided,
        )

    def observe(self, t: int) -> AdversaryObservation:
        """The adversary's view for round t."""
        seen = max(1, t - self.cfg.lateness)
        pending = None
        if self.cfg.adversary is AdversaryKind.STRONG_BALANCER:
            pending = self.driver.preview(t, self.outbox)
        return AdversaryObservation(
            snapshot=self._snapshots[seen],
            round=t,
            budget=self.cfg.budget,
            pending=pending,
        )

    def step_round(self) -> RoundRecord:
        """Advance one round and return its end-of-round record."""
        t = self.round + 1
        block = self.strategy(self.observe(t), self.streams.adversary)
        self._check_budget(block, t)
        blocked = block.mask(self.cfg.n)

        withheld = blocked if self.cfg.blocking is BlockingModel.WITHHOLD else None
        delivered = self.outbox.deliverable(blocked, withheld)
        self.messages_delivered += len(delivered)
        self.messages_dropped += len(self.outbox) - len(delivered)

        sent = self.driver.play(t, delivered, blocked)
        self.outbox = sent
        self.messages_sent += len(sent)
        self.blocked = blocked
        self.round = t

        record = self.driver.record(t, len(block), len(sent))
        self.records.append(record)
        self._snapshots[t + 1] = self.snapshot()
        for stale in [r for r in self._snapshots if r < t + 1 - self.cfg.lateness]:
            del self._snapshots[stale]
        return record

    def _check_budget(self, block: BlockSet, t: int) -> None:
        if len(block) > self.cfg.budget:
            raise BudgetExceededError(round=t, size=len(block), budget=self.cfg.budget)
        if any(not 0 <= u < self.cfg.n for u in block.blocked):
            raise BudgetExceededError("Adversary blocked an unknown node", round=t)

    def run(self) -> tuple[TrialResult, Trajectory]:
        """Run to termination."""
        logger.debug(
            f"trial seed={self.cfg.seed} n={self.cfg.n} ε={self.cfg.epsilon} "
            f"{self.cfg.protocol.value}/{self.cfg.adversary.value}"
        )
        if self.cfg.protocol is ProtocolKind.MULTIVALUE:
            result = self._run_multivalue()
        else:
            result = self._run_binary()
        logger.debug(f"trial seed={self.cfg.seed} → {result.outcome} in {result.rounds} rounds")
        return result, self.trajectory

    def _run_binary(self) -> TrialResult:
        cfg = self.cfg
        outcome: Outcome | None = None
        while outcome is None:
            outcome = check_termination(self.step_round(), cfg)
        terminated = self.round

        driver = self.driver
        if (
            outcome.succeeded
            and cfg.track_decisions
            and isinstance(driver, _BinaryDriver)
        ):
            last = min(cfg.max_rounds, terminated + cfg.decision_window)
            while self.round < last and not driver.all_decided:
                self.step_round()

        decisions = driver.decisions() if isinstance(driver, _BinaryDriver) else {}
        return self._result(outcome, terminated, decisions)

    def _run_multivalue(self) -> TrialResult:
        driver = self.driver
        assert isinstance(driver, _MultiValueDriver)
        for _ in range(1 + self.cfg.mv_iterations):
            self.step_round()

        counts = Counter(int(v) for v in driver.values if v != MV_BOT)
        top, top_count = max(counts.items(), key=lambda kv: (kv[1], -kv[0]), default=(None, 0))
        if top is not None and 2 * top_count > self.cfg.n:
            outcome = Outcome.consensus(top)
        else:
            outcome = Outcome(kind=OutcomeKind.ADVERSARY_WIN)

        budget = message_budget(driver.activated, self.cfg)
        if self.messages_sent > budget:
            logger.warning(f"multi-value trial sent {self.messages_sent} > budget {budget}")

        result = self._result(outcome, self.round, driver.decisions(self.round))
        x_star = driver.x_star
        return result.model_copy(
            update={
                "x_star": x_star,
                "agree_x_star": (
                    int(np.count_nonzero(driver.values == x_star)) if x_star is not None else 0
                ),
                "steady_nodes": driver.steady_nodes(),
            }
        )

    def _result(
        self,
        outcome: Outcome,
        terminated: int,
        decisions: dict[int, tuple[int, int]],
    ) -> TrialResult:
        values = self.driver.values
        agreeing = (
            int(np.count_nonzero(values == outcome.value)) if outcome.value is not None else 0
        )
        outputs = Counter(v for v, _ in decisions.values())
        common = outputs.most_common(1)[0][1] if outputs else 0
        allowed = set(self.inputs.tolist())

        initial_majority = None
        if self.cfg.protocol is not ProtocolKind.MULTIVALUE:
            ones = int(np.count_nonzero(self.inputs == BinaryValue.ONE))
            if 2 * ones != self.cfg.n:
                initial_majority = int(2 * ones > self.cfg.n)

        return TrialResult(
            outcome=outcome,
            rounds=terminated,
            rounds_executed=self.round,
            final_counts=self.driver.final_counts(),
            decisions=decisions,
            loss=self.cfg.n - agreeing,
            initial_majority=initial_majority,
            validity_violations=sum(c for v, c in outputs.items() if v not in allowed),
            conflicting_outputs=sum(outputs.values()) - common,
            messages=sum(r.messages for r in self.records),
        )


def run_trial(
    cfg: TrialConfig,
    inputs: Sequence[int] | np.ndarray | None = None,
    *,
    protocol: ProtocolKind | str | None = None,
    adversary: AdversaryKind | str | None = None,
    seed: int | None = None,
) -> tuple[TrialResult, Trajectory]:
    """
    Run one trial to termination.

    Args:
        cfg: Trial configuration
        inputs: Explicit per-node inputs (default: balanced binary or indexed multi-value)
        protocol: Overrides ``cfg.protocol``
        adversary: Overrides ``cfg.adversary``
        seed: Overrides ``cfg.seed``

    Returns:
        The trial result and its per-round trajectory

    Raises:
        ConfigError: For invalid configurations or protocol/adversary pairings
        BudgetExceededError: If the adversary blocks more than ⌊εn⌋ nodes
    """
    update = {
        key: value
        for key, value in (("protocol", protocol), ("adversary", adversary), ("seed", seed))
        if value is not None
    }
    if update:
        cfg = validate_config({**cfg.model_dump(), **update})
    return Simulation(cfg, inputs).run()


def dump_trajectory(trajectory: Trajectory) -> str:
    """Trajectory in its CSV dump layout."""
    return trajectory.to_csv()

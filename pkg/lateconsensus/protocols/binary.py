"""
The (k,ℓ)-majority protocol.

Each round a node either resets to ⊥ (it is blocked or received fewer than ℓ
values) or adopts the majority of ℓ values sampled without replacement from
its inbox and pushes the new value to k uniform destinations. The new value
never depends on the node's previous value. A node outputs y once the last
W = ⌈α ln n⌉ values it held are all in {y, ⊥} and at least half equal y.

An acting node spends one block of uniforms per round from its own stream:
ℓ coins for the sample, then k for the destinations (round 1 only needs the
k destination coins). ``binary_step`` consumes the block one node at a time;
``step_all`` applies the same coins to every node at once.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from lateconsensus.models import NO_OUTPUT, BinaryValue, Sends, TrialConfig
from lateconsensus.rng import Stream

Inbox = Mapping[int, int] | Sequence[int]


def as_multiset(inbox: Inbox) -> Counter[int]:
    """Normalise an inbox given as values or as value → multiplicity."""
    if isinstance(inbox, Mapping):
        return Counter({int(v): int(c) for v, c in inbox.items() if c > 0})
    return Counter(int(v) for v in inbox)


def destinations_from(coins: np.ndarray, n: int) -> np.ndarray:
    """Map uniforms in [0, 1) to node ids uniformly."""
    return np.minimum((np.asarray(coins) * n).astype(np.int64), n - 1)


def push_destinations(rng: Stream, n: int, count: int) -> np.ndarray:
    """``count`` destinations drawn independently and uniformly from all n nodes."""
    return destinations_from(rng.random(count), n)


def draw_zeros(zeros: np.ndarray | int, ones: np.ndarray | int, coins: np.ndarray) -> np.ndarray:
    """
    Zeros among values drawn without replacement, one coin per draw.

    Vectorised over nodes: ``zeros`` and ``ones`` have shape (m,) and
    ``coins`` shape (m, draws). A draw takes a 0 when its coin falls below
    the share of zeros still in the inbox.
    """
    z = np.array(np.atleast_1d(zeros), dtype=np.int64)
    o = np.array(np.atleast_1d(ones), dtype=np.int64)
    picked = np.zeros(len(z), dtype=np.int64)
    for column in np.atleast_2d(coins).T:
        remaining = z + o
        take = column * remaining < z
        picked += take
        z -= take
        o -= ~take & (remaining > 0)
    return picked


def window_length(alpha: float, n: int) -> int:
    """W = ⌈α ln n⌉."""
    return max(1, math.ceil(alpha * math.log(n)))


def _decide(window: Sequence[BinaryValue]) -> BinaryValue | None:
    defined = {v for v in window if v is not BinaryValue.UNDEFINED}
    if len(defined) != 1:
        return None
    (y,) = defined
    if sum(1 for v in window if v is y) >= math.ceil(len(window) / 2):
        return y
    return None


@dataclass(frozen=True, slots=True)
class BinaryNodeState:
    """Value, recent history and irrevocable output of one node."""

    value: BinaryValue
    window: int
    history: tuple[BinaryValue, ...] = ()
    output: BinaryValue | None = None
    output_round: int | None = None

    def record(self, value: BinaryValue, round: int) -> BinaryNodeState:
        """Hold ``value`` for this round and apply the decision rule."""
        history = (self.history + (value,))[-self.window :]
        output, output_round = self.output, self.output_round
        if output is None and len(history) == self.window:
            output = _decide(history)
            output_round = round if output is not None else None
        return BinaryNodeState(
            value=value,
            window=self.window,
            history=history,
            output=output,
            output_round=output_round,
        )


class DecisionWindow:
    """
    The decision rule for all n nodes at once.

    Keeps the last W values of every node in a ring buffer with running
    counts of zeros and ones, and fixes each node's first output.
    """

    def __init__(self, n: int, window: int) -> None:
        self.window = window
        self.rounds = 0
        self.history = np.full((n, window), BinaryValue.UNDEFINED, dtype=np.int8)
        self.zeros = np.zeros(n, dtype=np.int64)
        self.ones = np.zeros(n, dtype=np.int64)
        self.output = np.full(n, NO_OUTPUT, dtype=np.int64)
        self.output_round = np.zeros(n, dtype=np.int64)

    def record(self, values: np.ndarray, round: int) -> None:
        """Append this round's values and apply the rule to undecided nodes."""
        slot = self.rounds % self.window
        if self.rounds >= self.window:
            evicted = self.history[:, slot]
            self.zeros -= evicted == BinaryValue.ZERO
            self.ones -= evicted == BinaryValue.ONE
        self.history[:, slot] = values
        self.zeros += values == BinaryValue.ZERO
        self.ones += values == BinaryValue.ONE
        self.rounds += 1
        if self.rounds < self.window:
            return

        need = math.ceil(self.window / 2)
        open_ = self.output == NO_OUTPUT
        zero = open_ & (self.ones == 0) & (self.zeros >= need)
        one = open_ & (self.zeros == 0) & (self.ones >= need)
        self.output[zero] = BinaryValue.ZERO
        self.output[one] = BinaryValue.ONE
        self.output_round[zero | one] = round

    def decisions(self) -> dict[int, tuple[int, int]]:
        """Node → (output, round of output) for every decided node."""
        decided = np.flatnonzero(self.output != NO_OUTPUT)
        return {
            int(u): (int(self.output[u]), int(self.output_round[u])) for u in decided
        }


def majority_of(sample: Sequence[int], l: int | None = None) -> BinaryValue:  # noqa: E741
    """
    Strict majority of an odd-length 0/1 sample.

    Raises:
        ValueError: If the sample length is even, zero, or differs from ``l``
    """
    size = len(sample)
    if (l is not None and size != l) or size % 2 == 0:
        raise ValueError(f"sample must have odd length ℓ, got {size}")
    ones = sum(1 for v in sample if v == BinaryValue.ONE)
    return BinaryValue.ONE if 2 * ones > size else BinaryValue.ZERO


def sample_l(inbox: Inbox, l: int, rng: Stream) -> list[int]:  # noqa: E741
    """
    Uniform sample of ``l`` received values without replacement.

    Each draw spends one coin and picks a value with probability equal to its
    remaining multiplicity, values ordered ascending.

    Raises:
        ValueError: If fewer than ``l`` values were received
    """
    multiset = as_multiset(inbox)
    total = sum(multiset.values())
    if total < l:
        raise ValueError(f"inbox holds {total} values, fewer than ℓ={l}")
    values = sorted(multiset)
    counts = np.array([multiset[v] for v in values], dtype=np.int64)
    sample: list[int] = []
    for coin in rng.random(l):
        index = int(np.searchsorted(np.cumsum(counts), coin * counts.sum(), side="right"))
        counts[index] -= 1
        sample.append(values[index])
    return sample


def decision_check(
    history: Iterable[BinaryValue],
    alpha: float,
    n: int,
) -> BinaryValue | None:
    """
    Apply the decision rule to a node's history.

    Returns y when the last W values are all in {y, ⊥} and at least ⌈W/2⌉ equal y.
    """
    w = window_length(alpha, n)
    values = [BinaryValue(v) for v in history]
    if len(values) < w:
        return None
    return _decide(values[-w:])


def initial_state(cfg: TrialConfig) -> BinaryNodeState:
    """State before round 1."""
    return BinaryNodeState(value=BinaryValue.UNDEFINED, window=cfg.decision_window)


def binary_round_one(
    input: int,
    blocked: bool,
    rng: Stream,
    cfg: TrialConfig,
    state: BinaryNodeState | None = None,
) -> tuple[BinaryNodeState, Sends]:
    """
    Round 1: hold the input and push it, unless blocked.

    There is no previous round, so only blocking produces ⊥ here.
    """
    if input not in (BinaryValue.ZERO, BinaryValue.ONE):
        raise ValueError(f"binary input must be 0 or 1, got {input}")
    state = state or initial_state(cfg)
    if blocked:
        return state.record(BinaryValue.UNDEFINED, 1), Sends.none()
    value = BinaryValue(input)
    sends = Sends(payload=int(value), destinations=push_destinations(rng, cfg.n, cfg.k))
    return state.record(value, 1), sends


def binary_step(
    state: BinaryNodeState,
    inbox: Inbox,
    blocked: bool,
    rng: Stream,
    cfg: TrialConfig,
    round: int,
) -> tuple[BinaryNodeState, Sends]:
    """
    One round of the reset and update rules.

    Args:
        state: Node state at the start of the round
        inbox: Values delivered this round
        blocked: Whether the adversary blocks the node this round
        rng: The node's own stream
        cfg: Trial configuration (k, ℓ, n)
        round: Current round number, for the output timestamp
    """
    multiset = as_multiset(inbox)
    if blocked or sum(multiset.values()) < cfg.l:
        return state.record(BinaryValue.UNDEFINED, round), Sends.none()
    value = majority_of(sample_l(multiset, cfg.l, rng), cfg.l)
    sends = Sends(payload=int(value), destinations=push_destinations(rng, cfg.n, cfg.k))
    return state.record(value, round), sends


def round_one_all(
    inputs: np.ndarray, blocked: np.ndarray, coins: np.ndarray, cfg: TrialConfig
) -> tuple[np.ndarray, np.ndarray]:
    """
    ``binary_round_one`` for every node.

    Returns the round-1 values and an (n, k) destination matrix; rows of
    blocked nodes are meaningless.
    """
    values = np.where(blocked, BinaryValue.UNDEFINED, inputs).astype(np.int64)
    return values, destinations_from(coins[:, : cfg.k], cfg.n)


def step_all(
    zeros: np.ndarray,
    ones: np.ndarray,
    blocked: np.ndarray,
    coins: np.ndarray,
    cfg: TrialConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """
    ``binary_step`` for every node.

    Args:
        zeros: Zeros delivered to each node
        ones: Ones delivered to each node
        blocked: Blocked mask of the round
        coins: (n, ℓ + k) uniforms, one row per node
        cfg: Trial configuration

    Returns:
        New values (⊥ for blocked or starved nodes) and an (n, k) destination
        matrix; only rows of defined nodes are meaningful.
    """
    l = cfg.l  # noqa: E741
    acting = ~blocked & (zeros + ones >= l)
    picked = draw_zeros(zeros, ones, coins[:, :l])
    values = np.where(2 * picked > l, BinaryValue.ZERO, BinaryValue.ONE)
    values = np.where(acting, values, BinaryValue.UNDEFINED).astype(np.int64)
    return values, destinations_from(coins[:, l:], cfg.n)

"""
Blocking strategies.

A strategy reads an ``AdversaryObservation`` (a snapshot taken ``lateness``
rounds ago, the budget, and for the strong adversary a preview of the current
round) and returns the set of nodes blocked this round. The engine rejects any
set larger than the budget.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterator
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from lateconsensus.exceptions import ConfigError
from lateconsensus.models import AdversaryKind, BinaryValue, NodeId, SystemSnapshot
from lateconsensus.rng import Stream

logger = logging.getLogger(__name__)


class BlockSet(BaseModel):
    """Nodes blocked in one round."""

    model_config = ConfigDict(frozen=True)

    blocked: frozenset[NodeId] = Field(default_factory=frozenset)

    @field_validator("blocked", mode="before")
    @classmethod
    def coerce_ints(cls, v: object) -> frozenset[int]:
        if isinstance(v, np.ndarray):
            return frozenset(int(x) for x in v.tolist())
        return frozenset(int(x) for x in v)  # type: ignore[attr-defined]

    @classmethod
    def empty(cls) -> BlockSet:
        return cls()

    def __len__(self) -> int:
        return len(self.blocked)

    def __contains__(self, node: object) -> bool:
        return node in self.blocked

    def __iter__(self) -> Iterator[NodeId]:  # type: ignore[override]
        """Iterate in NodeId order (overrides pydantic's field iterator)."""
        return iter(sorted(self.blocked))

    def mask(self, n: int) -> np.ndarray:
        """Boolean array with True at blocked nodes."""
        out = np.zeros(n, dtype=bool)
        if self.blocked:
            out[np.fromiter(self.blocked, dtype=np.int64)] = True
        return out


@dataclass(frozen=True)
class PendingRound:
    """
    Preview of the current round for a strongly adaptive adversary.

    ``predicted[u]`` is the value u holds at the end of the round if neither u
    nor any peer in ``depends_on[u]`` is blocked; otherwise u ends with
    ``fallback[u]``.
    """

    predicted: np.ndarray
    fallback: np.ndarray
    depends_on: np.ndarray | None = None


class AdversaryObservation(BaseModel):
    """What a strategy may look at when choosing B_t."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    snapshot: SystemSnapshot
    round: int = Field(ge=1)
    budget: int = Field(ge=0)
    pending: PendingRound | None = None


def _signed(values: np.ndarray) -> np.ndarray:
    """+1 for ones, −1 for zeros, 0 for ⊥: twice each node's share of Δ."""
    return np.where(
        values == BinaryValue.ONE, 1, np.where(values == BinaryValue.ZERO, -1, 0)
    ).astype(np.int64)


def adv_none(obs: AdversaryObservation, rng: Stream | None = None) -> BlockSet:
    """Never block."""
    return BlockSet.empty()


def adv_random(obs: AdversaryObservation, rng: Stream) -> BlockSet:
    """Uniform random subset of exactly min(budget, n) nodes."""
    n = obs.snapshot.n
    size = min(obs.budget, n)
    if size == 0:
        return BlockSet.empty()
    return BlockSet(blocked=rng.choice(n, size=size, replace=False))


def adv_late_balancer(obs: AdversaryObservation, rng: Stream | None = None) -> BlockSet:
    """
    Block the lowest-id holders of the observed majority value.

    An exact tie has no majority and blocks nobody. ⊥-holders and minority
    holders are never blocked, so part of the budget may stay unused.
    """
    zeros, ones, _ = obs.snapshot.binary_counts()
    if zeros == ones:
        return BlockSet.empty()
    majority = BinaryValue.ONE if ones > zeros else BinaryValue.ZERO
    holders = np.flatnonzero(obs.snapshot.values == majority)
    return BlockSet(blocked=holders[: obs.budget])


def adv_strong_balancer(obs: AdversaryObservation, rng: Stream | None = None) -> BlockSet:
    """
    Greedy balancing with full view of the current round.

    Each step evaluates, for every candidate at once, the exact end-of-round
    Δ if that candidate were blocked as well, and blocks the one with the
    smallest |Δ| (lowest NodeId on ties). Stops when the budget is spent or no
    candidate strictly reduces |Δ|.

    Raises:
        ConfigError: If the engine did not grant a preview of the round
    """
    pending = obs.pending
    if pending is None:
        raise ConfigError("strong-balancer requires lateness 0", field="lateness")

    n = len(pending.predicted)
    predicted = _signed(pending.predicted)
    fallback = _signed(pending.fallback)
    swing = fallback - predicted

    if pending.depends_on is not None and pending.depends_on.size:
        width = pending.depends_on.shape[1]
        requester = np.repeat(np.arange(n), width)
        peer = pending.depends_on.reshape(-1)
        pairs = np.unique(np.stack([requester, peer], axis=1), axis=0)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        requester, peer = pairs[:, 0], pairs[:, 1]
    else:
        requester = peer = np.empty(0, dtype=np.int64)

    failed = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    current = int(predicted.sum())

    for _ in range(min(obs.budget, n)):
        live = ~failed
        gain = np.where(live, swing, 0)
        live_pairs = live[requester]
        np.add.at(gain, peer[live_pairs], swing[requester[live_pairs]])
        score = np.abs(current + gain).astype(float)
        score[blocked] = np.inf
        best = int(np.argmin(score))
        if score[best] >= abs(current):
            break
        blocked[best] = True
        current += int(gain[best])
        failed[best] = True
        failed[requester[(peer == best) & live_pairs]] = True

    chosen = np.flatnonzero(blocked)
    logger.debug(f"strong-balancer round {obs.round}: blocked {len(chosen)}, 2Δ → {current}")
    return BlockSet(blocked=chosen)


Strategy = Callable[[AdversaryObservation, Stream], BlockSet]

STRATEGIES: dict[AdversaryKind, Strategy] = {
    AdversaryKind.NONE: adv_none,
    AdversaryKind.RANDOM: adv_random,
    AdversaryKind.LATE_BALANCER: adv_late_balancer,
    AdversaryKind.STRONG_BALANCER: adv_strong_balancer,
}


def get_strategy(kind: AdversaryKind | str) -> Strategy:
    """Look up a strategy by id."""
    try:
        return STRATEGIES[AdversaryKind(kind)]
    except ValueError:
        raise ConfigError(f"Unknown adversary: {kind}", field="adversary") from None

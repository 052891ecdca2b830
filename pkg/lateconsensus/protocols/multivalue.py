"""
Multi-value consensus by randomized activation and max spreading.

Round 1 activates each node with probability min(1, c1·log n / n); active,
unblocked nodes keep their input and push it to ⌈c2·log n⌉ peers, everyone
else drops to ⊥. Then ⌈c3·log n⌉ iterations follow in which every node takes
the maximum of what it holds and what it received, becomes active once it
holds a value, and pushes to 2 peers while iterations remain. ⊥ sorts below
every value.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

from lateconsensus.models import MV_BOT, MultiValue, Sends, TrialConfig
from lateconsensus.protocols.binary import push_destinations
from lateconsensus.rng import Stream

SPREAD_FANOUT = 2


@dataclass(frozen=True, slots=True)
class MultiNodeState:
    value: MultiValue
    active: bool


def mv_init(
    input: MultiValue,
    blocked: bool,
    rng: Stream,
    cfg: TrialConfig,
) -> tuple[MultiNodeState, Sends]:
    """
    Activation coin and first push.

    The coin is flipped even for blocked nodes; blocking only suppresses sends
    and forces ⊥.
    """
    if input == MV_BOT:
        raise ValueError("multi-value input cannot be ⊥")
    active = bool(rng.random() < cfg.activation_probability)
    if not active or blocked:
        return MultiNodeState(value=MV_BOT, active=False), Sends.none()
    sends = Sends(
        payload=input,
        destinations=push_destinations(rng, cfg.n, cfg.initial_fanout),
    )
    return MultiNodeState(value=input, active=True), sends


def mv_step(
    state: MultiNodeState,
    inbox: Iterable[MultiValue],
    blocked: bool,
    t: int,
    rng: Stream,
    cfg: TrialConfig,
) -> tuple[MultiNodeState, Sends]:
    """
    Spreading iteration ``t`` (1-based) of the max rule.

    Raises:
        ValueError: If ``t`` lies outside 1..⌈c3·log n⌉
    """
    iterations = cfg.mv_iterations
    if not 1 <= t <= iterations:
        raise ValueError(f"iteration {t} outside 1..{iterations}")
    if blocked:
        value = MV_BOT if cfg.blocked_reset_mv else state.value
        return MultiNodeState(value=value, active=value != MV_BOT), Sends.none()

    value = max([state.value, *inbox])
    active = value != MV_BOT
    if active and t < iterations:
        return MultiNodeState(value=value, active=True), Sends(
            payload=value,
            destinations=push_destinations(rng, cfg.n, SPREAD_FANOUT),
        )
    return MultiNodeState(value=value, active=active), Sends.none()


def mv_decide(state: MultiNodeState) -> MultiValue:
    """Final decision: the value currently held, possibly ⊥."""
    return state.value


def message_budget(active_count: int, cfg: TrialConfig) -> int:
    """|A|·⌈c2 log n⌉ + 2n·⌈c3 log n⌉ upper bound on messages of a trial."""
    return active_count * cfg.initial_fanout + SPREAD_FANOUT * cfg.n * cfg.mv_iterations

"""Per-node step functions of the simulated protocols."""

from lateconsensus.protocols.binary import (
    BinaryNodeState,
    DecisionWindow,
    binary_round_one,
    binary_step,
    decision_check,
    majority_of,
    sample_l,
    step_all,
)
from lateconsensus.protocols.median import median_of_three, median_step
from lateconsensus.protocols.multivalue import MultiNodeState, mv_decide, mv_init, mv_step

__all__ = [
    "BinaryNodeState",
    "DecisionWindow",
    "MultiNodeState",
    "binary_round_one",
    "binary_step",
    "decision_check",
    "majority_of",
    "median_of_three",
    "median_step",
    "mv_decide",
    "mv_init",
    "mv_step",
    "sample_l",
    "step_all",
]

"""Pull-based median rule, the baseline a late adversary can stall."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from lateconsensus.protocols.binary import destinations_from
from lateconsensus.rng import Stream

PULLS = 2


def pull_targets(rng: Stream, n: int) -> np.ndarray:
    """Two peers drawn uniformly with replacement from all n nodes, one coin each."""
    return destinations_from(rng.random(PULLS), n)


def median_step(own: int, pulled: Sequence[int] | None) -> int:
    """
    Median of the own value and two pulled values.

    A node missing a response (either endpoint blocked) keeps its own value.
    """
    if pulled is None or len(pulled) < PULLS:
        return own
    a, b = pulled[0], pulled[1]
    return sorted((own, a, b))[1]


def median_of_three(own: np.ndarray, pulled: np.ndarray) -> np.ndarray:
    """Row-wise ``median_step`` for nodes that got both responses; ``pulled`` is (n, 2)."""
    return np.sort(np.column_stack([own, pulled]), axis=1)[:, 1]

"""
Deterministic random streams.

Every trial owns n + 2 independent streams built by spawning children of a
single ``numpy.random.SeedSequence`` and feeding each child to a PCG64 bit
generator: one stream per node, one for the adversary, one for the engine.
Spawned children are keyed by their spawn index, so rebuilding the streams
from the same seed reproduces every draw bit for bit.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

Stream = np.random.Generator


@dataclass(frozen=True)
class TrialStreams:
    """Random streams of one trial."""

    nodes: tuple[Stream, ...]
    adversary: Stream
    engine: Stream

    def __len__(self) -> int:
        return len(self.nodes) + 2

    def __iter__(self) -> Iterator[Stream]:
        yield from self.nodes
        yield self.adversary
        yield self.engine


def derive_streams(seed: int, n: int) -> TrialStreams:
    """
    Split ``seed`` into n + 2 independent PCG64 streams.

    Args:
        seed: 64-bit trial seed
        n: Number of nodes

    Returns:
        Node streams in NodeId order, then the adversary and engine streams
    """
    children = np.random.SeedSequence(seed).spawn(n + 2)
    generators = [np.random.Generator(np.random.PCG64(child)) for child in children]
    return TrialStreams(
        nodes=tuple(generators[:n]),
        adversary=generators[n],
        engine=generators[n + 1],
    )


def trial_seed(master_seed: int, trial_id: int) -> int:
    """64-bit seed of trial ``trial_id`` under ``master_seed``."""
    state = np.random.SeedSequence([master_seed, trial_id]).generate_state(1, dtype=np.uint64)
    return int(state[0])


"""Tests for blocking strategies."""

import numpy as np
import pytest
from scipy import stats

from lateconsensus.adversary import (
    AdversaryObservation,
    BlockSet,
    PendingRound,
    adv_late_balancer,
    adv_none,
    adv_random,
    adv_strong_balancer,
    get_strategy,
)
from lateconsensus.exceptions import ConfigError
from lateconsensus.models import AdversaryKind

from .conftest import make_snapshot


def observe(values: list[int], budget: int, pending: PendingRound | None = None) -> AdversaryObservation:
    return AdversaryObservation(snapshot=make_snapshot(values), round=2, budget=budget, pending=pending)


class TestBlockSet:
    """Tests for BlockSet."""

    def test_coerces_arrays(self):
        """Numpy arrays become a frozenset of ints."""
        block = BlockSet(blocked=np.array([3, 1, 3]))
        assert block.blocked == frozenset({1, 3})
        assert len(block) == 2
        assert list(block) == [1, 3]
        assert 3 in block and 2 not in block

    def test_mask(self):
        """mask marks blocked ids."""
        assert BlockSet(blocked=[0, 2]).mask(4).tolist() == [True, False, True, False]
        assert not BlockSet.empty().mask(3).any()


class TestSimpleStrategies:
    """Tests for none and random."""

    def test_none(self):
        """adv_none never blocks."""
        assert len(adv_none(observe([1, 1, 0], 2))) == 0

    def test_random_size(self, rng):
        """adv_random blocks exactly the budget."""
        block = adv_random(observe([1] * 20, 5), rng)
        assert len(block) == 5
        assert all(0 <= u < 20 for u in block)

    def test_random_zero_budget(self, rng):
        """Budget 0 blocks nobody."""
        assert len(adv_random(observe([1] * 20, 0), rng)) == 0

    def test_random_is_uniform(self, rng):
        """Every node is blocked equally often."""
        n, budget, draws = 10, 3, 4000
        counts = np.zeros(n, dtype=np.int64)
        obs = observe([1] * n, budget)
        for _ in range(draws):
            counts[list(adv_random(obs, rng))] += 1
        assert counts.sum() == budget * draws
        assert stats.chisquare(counts).pvalue > 1e-3


class TestLateBalancer:
    """Tests for the late balancing strategy."""

    def test_blocks_majority_lowest_ids(self):
        """Ones are the majority; the lowest-id ones are blocked."""
        block = adv_late_balancer(observe([0, 1, 1, -1, 1, 0, 1], 2))
        assert list(block) == [1, 2]

    def test_tie_blocks_nobody(self):
        """An exact tie has no majority to block."""
        assert len(adv_late_balancer(observe([1, 0, 1, 0], 1))) == 0
        assert len(adv_late_balancer(observe([1, 0, -1, -1], 2))) == 0

    def test_balanced_start_unblocked(self):
        """A balanced even start is left alone in round 1."""
        values = [1] * 32 + [0] * 32
        assert len(adv_late_balancer(observe(values, 4))) == 0
        assert list(adv_late_balancer(observe(values[:-1], 4))) == [0, 1, 2, 3]

    def test_never_exceeds_holders(self):
        """Unused budget stays unused; ⊥ is never blocked."""
        block = adv_late_balancer(observe([-1, 1, -1, -1], 3))
        assert list(block) == [1]

    def test_within_budget(self):
        """The block set never exceeds the budget."""
        assert len(adv_late_balancer(observe([1] * 50, 4))) == 4


class TestStrongBalancer:
    """Tests for the current-round greedy strategy."""

    def test_requires_preview(self):
        """Without a preview the strategy is unusable."""
        with pytest.raises(ConfigError, match="lateness 0"):
            adv_strong_balancer(observe([1, 0], 1))

    def test_reduces_imbalance(self):
        """Blocking predicted majority holders reduces |Δ|."""
        predicted = np.array([1, 1, 1, 1, 0, 0])
        pending = PendingRound(predicted=predicted, fallback=np.full(6, -1))
        block = adv_strong_balancer(observe([1] * 6, 2, pending))
        assert list(block) == [0, 1]

    def test_stops_when_balanced(self):
        """No block when nothing strictly reduces |Δ|."""
        pending = PendingRound(predicted=np.array([1, 0, 1, 0]), fallback=np.full(4, -1))
        assert len(adv_strong_balancer(observe([1, 0, 1, 0], 3, pending))) == 0

    def test_dependencies_count(self):
        """Blocking a pulled peer also reverts the nodes pulling from it."""
        predicted = np.array([1, 1, 1, 1, 1, 0, 0])
        # Nodes 1 and 2 pull from node 0; blocking node 0 alone reverts three ones.
        depends = np.array([[0, 0], [0, 0], [0, 0], [3, 3], [4, 4], [5, 5], [6, 6]])
        pending = PendingRound(predicted=predicted, fallback=np.full(7, -1), depends_on=depends)
        block = adv_strong_balancer(observe([1, 1, 1, 1, 1, 0, 0], 2, pending))
        assert list(block) == [0]

    @pytest.mark.parametrize("seed", range(40))
    def test_single_block_matches_exhaustive_search(self, seed):
        """With budget 1 the pick is the exhaustive best over all 8 nodes."""
        n = 8
        gen = np.random.default_rng(seed)
        predicted = gen.integers(0, 2, n)
        fallback = gen.integers(-1, 2, n)
        depends = gen.integers(0, n, (n, 2))
        pending = PendingRound(predicted=predicted, fallback=fallback, depends_on=depends)

        def signed(v):
            return np.where(v == 1, 1, np.where(v == 0, -1, 0))

        current = abs(int(signed(predicted).sum()))
        imbalance = []
        for b in range(n):
            reverted = (np.arange(n) == b) | np.any(depends == b, axis=1)
            imbalance.append(abs(int(signed(np.where(reverted, fallback, predicted)).sum())))
        best = int(np.argmin(imbalance))
        expected = [best] if imbalance[best] < current else []

        block = adv_strong_balancer(observe(predicted.tolist(), 1, pending))
        assert list(block) == expected


class TestGetStrategy:
    """Tests for strategy lookup."""

    @pytest.mark.parametrize("kind", list(AdversaryKind))
    def test_known(self, kind):
        """Every kind resolves."""
        assert callable(get_strategy(kind))

    def test_unknown(self):
        """Unknown ids are config errors."""
        with pytest.raises(ConfigError):
            get_strategy("oracle")

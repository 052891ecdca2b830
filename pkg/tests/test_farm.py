"""Tests for the concurrent trial farm."""

import time

import pytest

from lateconsensus.engine import run_trial
from lateconsensus.exceptions import BudgetExceededError, LateConsensusError
from lateconsensus.farm import (
    TrialFarm,
    TrialJob,
    completed_records,
    first_error,
    run_job,
)


def _slow_square(x: int) -> int:
    time.sleep(0.01 * (5 - x))
    return x * x


def _fail_on_two(x: int) -> int:
    if x == 2:
        raise BudgetExceededError(round=1, size=5, budget=4)
    return x


class TestTrialFarm:
    """Tests for TrialFarm."""

    def test_workers_default_from_settings(self, settings):
        """Worker count falls back to settings."""
        assert TrialFarm(settings=settings).workers == 2
        assert TrialFarm(workers=7, settings=settings).workers == 7

    @pytest.mark.asyncio
    async def test_map_keeps_order(self, settings):
        """Results come back in submission order."""
        farm = TrialFarm(workers=3, settings=settings)
        assert await farm.map(_slow_square, list(range(5))) == [0, 1, 4, 9, 16]

    @pytest.mark.asyncio
    async def test_progress(self, settings):
        """Progress is reported once per item with the running total."""
        calls = []
        farm = TrialFarm(workers=2, settings=settings)
        await farm.map(_slow_square, [1, 2, 3], on_progress=lambda c, t, r: calls.append((c, t)))
        assert sorted(calls) == [(1, 3), (2, 3), (3, 3)]

    @pytest.mark.asyncio
    async def test_errors_in_place(self, settings):
        """A failing trial yields its error without aborting the batch."""
        farm = TrialFarm(workers=2, settings=settings)
        results = await farm.map(_fail_on_two, [1, 2, 3])
        assert results[0] == 1 and results[2] == 3
        assert isinstance(results[1], BudgetExceededError)

    @pytest.mark.asyncio
    async def test_sync_refused_in_loop(self, settings):
        """The sync wrappers cannot run inside an event loop."""
        with pytest.raises(RuntimeError, match="async context"):
            TrialFarm(settings=settings).map_sync(_slow_square, [1])

    def test_run_sync_matches_serial(self, small_config, settings):
        """Farmed trials equal trials run one by one."""
        jobs = [
            TrialJob(trial_id=i, config=small_config.model_copy(update={"seed": i}))
            for i in range(4)
        ]
        records = completed_records(TrialFarm(workers=4, settings=settings).run_sync(jobs))
        assert [r.job.trial_id for r in records] == [0, 1, 2, 3]
        for record in records:
            expected, _ = run_trial(record.job.config)
            assert record.result == expected
            assert record.trajectory is None

    def test_keep_trajectory(self, small_config):
        """Trajectories are kept on request."""
        record = run_job(TrialJob(trial_id=0, config=small_config, keep_trajectory=True))
        assert record.trajectory is not None
        assert len(record.trajectory) == record.result.rounds_executed


class TestBatchHelpers:
    """Tests for error helpers."""

    def test_first_error(self):
        """The first error in a batch is found."""
        error = LateConsensusError("boom")
        assert first_error([1, error, LateConsensusError("later")]) is error
        assert first_error([1, 2]) is None

    def test_completed_records_raises(self):
        """An aborted trial surfaces as its error."""
        with pytest.raises(BudgetExceededError):
            completed_records([1, BudgetExceededError()])
        assert completed_records([1, 2]) == [1, 2]

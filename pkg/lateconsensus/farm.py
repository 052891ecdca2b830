"""
Concurrent trial runner - async-first with sync wrapper.

Trials share nothing but their immutable configuration, so they are farmed
out to worker threads under a semaphore. Results come back in submission
order regardless of completion order, which keeps serial and parallel runs
byte-identical downstream.
"""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any, TypeVar

from lateconsensus.config import Settings, get_settings
from lateconsensus.engine import Simulation
from lateconsensus.exceptions import LateConsensusError
from lateconsensus.models import Trajectory, TrialConfig, TrialResult

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrialJob:
    """One trial to run."""

    trial_id: int
    config: TrialConfig
    inputs: tuple[int, ...] | None = None
    keep_trajectory: bool = False


@dataclass(frozen=True)
class TrialRecord:
    """A finished trial."""

    job: TrialJob
    result: TrialResult
    trajectory: Trajectory | None = None


T = TypeVar("T")
R = TypeVar("R")

# Callback(completed, total, result_or_none)
FarmProgress = Callable[[int, int, Any], None]


def run_job(job: TrialJob) -> TrialRecord:
    """Run a single job on the calling thread."""
    result, trajectory = Simulation(job.config, job.inputs).run()
    return TrialRecord(
        job=job,
        result=result,
        trajectory=trajectory if job.keep_trajectory else None,
    )


class TrialFarm:
    """
    Runs batches of independent trials concurrently.

    Example:
        farm = TrialFarm(workers=8)
        records = farm.run_sync(jobs)
    """

    def __init__(
        self,
        workers: int | None = None,
        settings: Settings | None = None,
    ) -> None:
        self._settings = settings or get_settings()
        self.workers = workers or self._settings.workers

    async def map(
        self,
        fn: Callable[[T], R],
        items: Sequence[T],
        *,
        on_progress: FarmProgress | None = None,
    ) -> list[R | LateConsensusError]:
        """
        Apply ``fn`` to every item on worker threads, at most ``workers`` at a time.

        Args:
            fn: Per-trial function; must not share mutable state between calls
            items: Inputs, one per trial
            on_progress: Callback(completed, total, result_or_none)

        Returns:
            One result or error per item, in submission order
        """
        semaphore = asyncio.Semaphore(self.workers)
        completed = 0
        total = len(items)

        async def run_one(index: int, item: T) -> R | LateConsensusError:
            nonlocal completed
            async with semaphore:
                try:
                    result = await asyncio.to_thread(fn, item)
                    completed += 1
                    if on_progress:
                        on_progress(completed, total, result)
                    return result
                except LateConsensusError as e:
                    logger.warning(f"trial #{index} aborted: {e}")
                    completed += 1
                    if on_progress:
                        on_progress(completed, total, None)
                    return e

        logger.debug(f"farming {total} trials over {self.workers} workers")
        return list(await asyncio.gather(*(run_one(i, item) for i, item in enumerate(items))))

    async def run(
        self,
        jobs: Sequence[TrialJob],
        *,
        on_progress: FarmProgress | None = None,
    ) -> list[TrialRecord | LateConsensusError]:
        """Run every job to termination."""
        return await self.map(run_job, jobs, on_progress=on_progress)

    def _get_loop(self) -> asyncio.AbstractEventLoop:
        try:
            asyncio.get_running_loop()
        except RuntimeError:
            pass  # No running loop, which is what we want for sync use
        else:
            raise RuntimeError(
                "Cannot use the sync farm from within an async context. "
                "Await TrialFarm.run instead."
            )
        return asyncio.new_event_loop()

    def _run(self, coro: Any) -> Any:
        try:
            loop = self._get_loop()
        except RuntimeError:
            coro.close()
            raise
        try:
            return loop.run_until_complete(coro)
        finally:
            loop.close()

    def map_sync(
        self,
        fn: Callable[[T], R],
        items: Sequence[T],
        *,
        on_progress: FarmProgress | None = None,
    ) -> list[R | LateConsensusError]:
        """Apply ``fn`` to every item (sync version)."""
        return self._run(self.map(fn, items, on_progress=on_progress))

    def run_sync(
        self,
        jobs: Sequence[TrialJob],
        *,
        on_progress: FarmProgress | None = None,
    ) -> list[TrialRecord | LateConsensusError]:
        """Run every job to termination (sync version)."""
        return self._run(self.run(jobs, on_progress=on_progress))


def first_error(records: Sequence[Any]) -> LateConsensusError | None:
    """First aborted trial in a batch, if any."""
    return next((r for r in records if isinstance(r, LateConsensusError)), None)


def completed_records(records: Sequence[R | LateConsensusError]) -> list[R]:
    """
    Results of a batch, raising the first aborted trial's error.

    Raises:
        LateConsensusError: If any trial of the batch aborted
    """
    error = first_error(records)
    if error is not None:
        raise error
    return list(records)  # type: ignore[arg-type]

from __future__ import annotations

import multiprocessing
from collections.abc import Callable, Sequence
from typing import Any, TypeVar

import torch

from .logger import Logger

__all__ = ("WorkerPool",)

T = TypeVar("T")


def _pin_threads() -> None:
    """Worker initializer, one torch thread per process."""
    torch.set_num_threads(1)


class WorkerPool(Logger):
    """
    Runs a task function over per-utterance task tuples.

    The task function must be a picklable module-level callable. With `jobs <= 1`
    everything runs in the calling process, otherwise a `spawn` pool is used. Results
    come back in input order either way.

    Examples:
        >>> pool = WorkerPool(jobs=1)
        >>> pool.map(abs, [(-1,), (2,)])
        [1, 2]
    """

    def __init__(self, jobs: int | None = 1) -> None:
        """
        Args:
            jobs: Worker processes. Defaults to 1, capped at `multiprocessing.cpu_count()`
        """
        self.cpu_count = multiprocessing.cpu_count()
        self.jobs = max(1, min(jobs or 1, self.cpu_count))

    def map(self, task: Callable[..., T], items: Sequence[tuple[Any, ...]]) -> list[T]:
        """
        Apply `task(*item)` to every item.

        Args:
            task: Module-level callable
            items: Argument tuples

        Returns:
            Results in input order
        """
        if self.jobs <= 1 or len(items) <= 1:
            return [task(*item) for item in items]

        processes = min(self.jobs, len(items))
        self.logger.info(f"Running {len(items)} tasks on {processes} worker processes")
        context = multiprocessing.get_context("spawn")
        with context.Pool(processes=processes, initializer=_pin_threads) as pool:
            return pool.starmap(task, items)

"""A small in-process map-reduce engine.

`run` maps a function over tasks (by default the chunks of a DataStore) on a
pool of worker threads or processes and folds the partial results with a
pairwise tree in task order. Completion order never affects the result.
"""

import logging
import os
from collections.abc import Callable, Hashable, Sequence
from concurrent.futures import (
    FIRST_EXCEPTION,
    Executor,
    Future,
    ProcessPoolExecutor,
    ThreadPoolExecutor,
    wait,
)
from dataclasses import dataclass, field
from typing import Any, Generic, Literal, TypeVar

from cryo_reduce.app_utils.errors import MapReduceError
from cryo_reduce.stages.mrc_ingest import DataStore

logger = logging.getLogger(__name__)

P = TypeVar("P")

ExecutorKind = Literal["thread", "process"]


def default_workers() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class MapReduceJob(Generic[P]):
    """One map-reduce job over a datastore.

    `map_fn` receives a task key: a chunk id unless `tasks` lists explicit keys
    (e.g. chunk pairs). It must not mutate shared state. `reduce_fn` must be
    associative and commutative, and `identity` must satisfy
    reduce_fn(identity, x) == x.
    """

    chunk_source: DataStore
    map_fn: Callable[[Any], P]
    reduce_fn: Callable[[P, P], P]
    identity: P
    workers: int = field(default_factory=default_workers)
    tasks: Sequence[Hashable] | None = None
    executor: ExecutorKind = "thread"

    def task_keys(self) -> list[Hashable]:
        if self.tasks is not None:
            return list(self.tasks)
        return [info.chunk_id for info in self.chunk_source.chunks]


def tree_reduce(
    values: Sequence[P], reduce_fn: Callable[[P, P], P], identity: P
) -> P:
    """Pairwise reduction in index order: ((v0+v1)+(v2+v3))+... ."""
    level = list(values)
    if not level:
        return identity
    while len(level) > 1:
        paired = [
            reduce_fn(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)
        ]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return reduce_fn(identity, level[0])


def _make_executor(kind: ExecutorKind, workers: int) -> Executor:
    if kind == "process":
        return ProcessPoolExecutor(max_workers=workers)
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mapreduce")


def run(job: MapReduceJob[P]) -> P:
    """Execute a job and return the reduce-fold of every map output.

    Raises:
        MapReduceError: a map task failed; pending tasks are cancelled and no
            partial result is returned.
        ValueError: no tasks or workers < 1.
    """
    if job.workers < 1:
        raise ValueError(f"workers must be >= 1, got {job.workers}")
    keys = job.task_keys()
    if not keys:
        raise ValueError("map-reduce job has no tasks (empty datastore?)")

    if job.workers == 1 and job.executor == "thread":
        partials = []
        for key in keys:
            try:
                partials.append(job.map_fn(key))
            except Exception as e:
                raise MapReduceError(key, e) from e
        return tree_reduce(partials, job.reduce_fn, job.identity)

    executor = _make_executor(job.executor, min(job.workers, len(keys)))
    futures: dict[Future[P], Hashable] = {}
    try:
        for key in keys:
            futures[executor.submit(job.map_fn, key)] = key
        position = {future: index for index, future in enumerate(futures)}
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        failed = [f for f in done if f.exception() is not None]
        if failed:
            # tasks after the earliest failure are dropped; earlier ones finish
            # so the lowest failing task index is the one reported
            cutoff = min(position[f] for f in failed)
            for future in pending:
                if position[future] > cutoff:
                    future.cancel()
            wait([f for f in futures if position[f] < cutoff])
            failed = [
                f
                for f in futures
                if f.done() and not f.cancelled() and f.exception() is not None
            ]
            first = min(failed, key=lambda f: position[f])
            cause = first.exception()
            assert cause is not None
            raise MapReduceError(futures[first], cause) from cause
    finally:
        executor.shutdown(wait=True, cancel_futures=True)

    by_key = {key: future.result() for future, key in futures.items()}
    partials = [by_key[key] for key in keys]
    logger.debug(f"map-reduce: {len(keys)} task(s) on {job.workers} worker(s)")
    return tree_reduce(partials, job.reduce_fn, job.identity)

# Copyright 2026 The cryo-reduce Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import threading
from collections import Counter
from collections.abc import Callable
from functools import partial

import numpy as np
import pytest

from cryo_reduce.app_utils.errors import MapReduceError
from cryo_reduce.stages.covariance_engine import compute_mean
from cryo_reduce.stages.mapreduce_core import MapReduceJob, run, tree_reduce
from cryo_reduce.stages.mrc_ingest import DataStore


def _chunk_total(store: DataStore, chunk_id: int) -> float:
    return float(store.read_chunk(chunk_id).sum())


def _add(a: float, b: float) -> float:
    return a + b


def _fail_on(bad: set[int], chunk_id: int) -> int:
    if chunk_id in bad:
        raise RuntimeError(f"boom {chunk_id}")
    return chunk_id


@pytest.fixture
def store(store_factory: Callable[..., DataStore]) -> DataStore:
    rng = np.random.default_rng(3)
    return store_factory(rng.normal(size=(23, 4, 4)) * 1e3, chunk_images=2)


def test_tree_reduce_keeps_index_order() -> None:
    """String concatenation is associative but not commutative: order shows."""
    assert tree_reduce(list("abcde"), lambda a, b: a + b, "") == "abcde"
    assert tree_reduce([], lambda a, b: a + b, "") == ""


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_sum_is_bitwise_identical_across_workers(store: DataStore, workers: int) -> None:
    """The reduce tree depends only on the task count, never on completion order."""
    job = MapReduceJob(
        chunk_source=store,
        map_fn=partial(_chunk_total, store),
        reduce_fn=_add,
        identity=0.0,
        workers=workers,
    )
    sequential = MapReduceJob(
        chunk_source=store,
        map_fn=partial(_chunk_total, store),
        reduce_fn=_add,
        identity=0.0,
        workers=1,
    )

    assert run(job) == run(sequential)


def test_explicit_tasks(store: DataStore) -> None:
    job = MapReduceJob(
        chunk_source=store,
        map_fn=lambda pair: pair[0] * pair[1],
        reduce_fn=_add,
        identity=0,
        workers=3,
        tasks=[(1, 2), (3, 4), (5, 6)],
    )
    assert run(job) == 2 + 12 + 30


@pytest.mark.parametrize("workers", [1, 4])
def test_failure_reports_lowest_failing_chunk(store: DataStore, workers: int) -> None:
    job = MapReduceJob(
        chunk_source=store,
        map_fn=partial(_fail_on, {5, 2}),
        reduce_fn=_add,
        identity=0,
        workers=workers,
    )
    with pytest.raises(MapReduceError) as excinfo:
        run(job)
    assert excinfo.value.chunk_id == 2
    assert isinstance(excinfo.value.__cause__, RuntimeError)


def test_rejects_bad_jobs(store: DataStore) -> None:
    with pytest.raises(ValueError, match="workers"):
        run(MapReduceJob(store, _add, _add, 0, workers=0))
    with pytest.raises(ValueError, match="no tasks"):
        run(MapReduceJob(store, _add, _add, 0, workers=1, tasks=[]))


def test_process_executor_matches_threads(store: DataStore) -> None:
    """Map functions are module-level partials, so they cross process boundaries."""
    threaded = compute_mean(store, workers=3, executor="thread")
    processes = compute_mean(store, workers=2, executor="process")
    np.testing.assert_array_equal(threaded, processes)


@pytest.mark.parametrize("workers", [1, 3, 8])
def test_each_chunk_is_mapped_exactly_once(store: DataStore, workers: int) -> None:
    seen: Counter[int] = Counter()
    lock = threading.Lock()

    def record(chunk_id: int) -> int:
        with lock:
            seen[chunk_id] += 1
        return 1

    job = MapReduceJob(
        chunk_source=store,
        map_fn=record,
        reduce_fn=_add,
        identity=0,
        workers=workers,
    )

    assert run(job) == len(store.chunks)
    assert seen == Counter(info.chunk_id for info in store.chunks)

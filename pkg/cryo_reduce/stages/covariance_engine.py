"""Covariance stage: mean image, centered data matrix and C by map-reduce.

Pixel mode computes C = A·Aᵀ (N²×N²) as a sum of per-chunk outer products.
Gram mode computes C = Aᵀ·A (M×M) block by block over ordered chunk pairs;
it shares the nonzero spectrum of pixel mode and is the only feasible mode
for full-size micrographs. No 1/(M-1) factor is applied: correlation
normalization cancels it.
"""

import json
import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from cryo_reduce.app_utils.errors import BudgetExceededError, IngestError
from cryo_reduce.app_utils.typing import CovarianceMode
from cryo_reduce.stages.mapreduce_core import ExecutorKind, MapReduceJob, run
from cryo_reduce.stages.mrc_ingest import STORE_DTYPE, DataStore

logger = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
FLOAT_BYTES = np.dtype(np.float64).itemsize


@dataclass(frozen=True)
class DataMatrix:
    """The N²×M matrix A whose columns are (optionally mean-centered) images.

    Columns are produced per chunk on demand; the whole matrix is never
    resident at once.
    """

    store: DataStore
    mean_vector: np.ndarray
    centered: bool

    @property
    def M(self) -> int:
        return self.store.image_count

    @property
    def N2(self) -> int:
        return self.store.vector_length

    def chunk(self, chunk_id: int) -> np.ndarray:
        block = self.store.read_chunk(chunk_id)
        if self.centered:
            block -= self.mean_vector[:, np.newaxis]
        return block

    def chunk_columns(self, chunk_id: int) -> slice:
        info = self.store.chunks[chunk_id]
        return slice(info.start, info.stop)


@dataclass(frozen=True)
class CovarianceResult:
    mode: CovarianceMode
    C: np.ndarray
    s: np.ndarray
    M: int
    N2: int

    @property
    def dim(self) -> int:
        return self.C.shape[0]


def _chunk_sum(store: DataStore, chunk_id: int) -> np.ndarray:
    return store.read_chunk(chunk_id).sum(axis=1)


def _add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a + b


def compute_mean(
    store: DataStore, workers: int = 1, executor: ExecutorKind = "thread"
) -> np.ndarray:
    """Per-pixel mean over all images, in one map-reduce pass."""
    if store.image_count == 0:
        raise IngestError("cannot average an empty datastore")
    total = run(
        MapReduceJob(
            chunk_source=store,
            map_fn=partial(_chunk_sum, store),
            reduce_fn=_add,
            identity=np.zeros(store.vector_length),
            workers=workers,
            executor=executor,
        )
    )
    return total / store.image_count


def center(store: DataStore, mean: np.ndarray) -> DataMatrix:
    """Represent Φⱼ = xⱼ − mean lazily over the store's chunks."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (store.vector_length,):
        raise ValueError(
            f"mean has shape {mean.shape}, expected ({store.vector_length},)"
        )
    mean = mean.copy()
    mean.setflags(write=False)
    return DataMatrix(store=store, mean_vector=mean, centered=True)


def uncentered(store: DataStore) -> DataMatrix:
    """The raw image columns, for runs with centering disabled."""
    zeros = np.zeros(store.vector_length)
    zeros.setflags(write=False)
    return DataMatrix(store=store, mean_vector=zeros, centered=False)


def _pixel_block(amat: DataMatrix, chunk_id: int) -> np.ndarray:
    block = amat.chunk(chunk_id)
    return block @ block.T


def _gram_block(
    amat: DataMatrix, pair: tuple[int, int]
) -> dict[tuple[int, int], np.ndarray]:
    i, j = pair
    left = amat.chunk(i)
    right = left if i == j else amat.chunk(j)
    return {pair: left.T @ right}


def _merge_blocks(
    a: dict[tuple[int, int], np.ndarray], b: dict[tuple[int, int], np.ndarray]
) -> dict[tuple[int, int], np.ndarray]:
    return {**a, **b}


def check_budget(
    mode: CovarianceMode, M: int, N2: int, memory_budget_bytes: int
) -> None:
    dims = {"pixel": N2, "gram": M}
    required = dims[mode] ** 2 * FLOAT_BYTES
    if required <= memory_budget_bytes:
        return
    other: CovarianceMode = "gram" if mode == "pixel" else "pixel"
    feasible = other if dims[other] ** 2 * FLOAT_BYTES <= memory_budget_bytes else None
    raise BudgetExceededError(required, memory_budget_bytes, feasible)


def covariance(
    amat: DataMatrix,
    mode: CovarianceMode = "gram",
    workers: int = 1,
    executor: ExecutorKind = "thread",
    memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET,
) -> CovarianceResult:
    """Compute C by map-reduce over image chunks.

    Args:
        amat: Data matrix (centered or not).
        mode: "pixel" for C = A·Aᵀ, "gram" for C = Aᵀ·A.
        workers: Map-reduce worker count.
        executor: "thread" or "process" workers.
        memory_budget_bytes: Upper bound on the dense C.

    Returns:
        CovarianceResult with s = sqrt(diag(C)).
    """
    if amat.M == 0 or amat.N2 == 0:
        raise ValueError("covariance of an empty data matrix")
    check_budget(mode, amat.M, amat.N2, memory_budget_bytes)

    if mode == "pixel":
        C = run(
            MapReduceJob(
                chunk_source=amat.store,
                map_fn=partial(_pixel_block, amat),
                reduce_fn=_add,
                identity=np.zeros((amat.N2, amat.N2)),
                workers=workers,
                executor=executor,
            )
        )
    elif mode == "gram":
        n_chunks = len(amat.store.chunks)
        pairs = [(i, j) for i in range(n_chunks) for j in range(i, n_chunks)]
        blocks = run(
            MapReduceJob(
                chunk_source=amat.store,
                map_fn=partial(_gram_block, amat),
                reduce_fn=_merge_blocks,
                identity={},
                workers=workers,
                tasks=pairs,
                executor=executor,
            )
        )
        C = np.empty((amat.M, amat.M))
        for (i, j), block in blocks.items():
            rows, cols = amat.chunk_columns(i), amat.chunk_columns(j)
            C[rows, cols] = block
            if i != j:
                C[cols, rows] = block.T
    else:
        raise ValueError(f"unknown covariance mode {mode!r}")

    C = 0.5 * (C + C.T)
    s = np.sqrt(np.clip(np.diag(C), 0.0, None))
    C.setflags(write=False)
    s.setflags(write=False)
    logger.info(f"Covariance ({mode} mode): {C.shape[0]}x{C.shape[1]}")
    return CovarianceResult(mode=mode, C=C, s=s, M=amat.M, N2=amat.N2)


def save_covariance(result: CovarianceResult, directory: str | Path) -> Path:
    """Write covariance.f64 (headerless little-endian) plus covariance.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    result.C.astype(STORE_DTYPE).tofile(directory / "covariance.f64")
    sidecar = {
        "mode": result.mode,
        "M": result.M,
        "N2": result.N2,
        "dims": list(result.C.shape),
        "dtype": "<f8",
    }
    target = directory / "covariance.json"
    target.write_text(json.dumps(sidecar, indent=2) + "\n")
    return target


def load_covariance(directory: str | Path) -> CovarianceResult:
    directory = Path(directory)
    sidecar = json.loads((directory / "covariance.json").read_text())
    rows, cols = sidecar["dims"]
    C = np.fromfile(directory / "covariance.f64", dtype=STORE_DTYPE)
    if C.size != rows * cols:
        raise IngestError(
            f"{directory / 'covariance.f64'}: expected {rows * cols} values, found {C.size}"
        )
    C = C.reshape(rows, cols).astype(np.float64)
    s = np.sqrt(np.clip(np.diag(C), 0.0, None))
    C.setflags(write=False)
    s.setflags(write=False)
    return CovarianceResult(
        mode=sidecar["mode"], C=C, s=s, M=int(sidecar["M"]), N2=int(sidecar["N2"])
    )

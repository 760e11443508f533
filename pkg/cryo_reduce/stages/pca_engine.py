"""PCA stage: covariance → correlation → SVD → eigenspace scores.

The SVD of the symmetric correlation matrix is computed with cyclic Jacobi
rotations; singular values are the absolute eigenvalues and the right
singular vectors carry the eigenvalue signs.
"""

import json
import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from cryo_reduce.app_utils.errors import ConvergenceError, ZeroVarianceError
from cryo_reduce.app_utils.typing import CovarianceMode
from cryo_reduce.stages.covariance_engine import CovarianceResult, DataMatrix
from cryo_reduce.stages.mapreduce_core import ExecutorKind, MapReduceJob, run
from cryo_reduce.stages.mrc_ingest import STORE_DTYPE

logger = logging.getLogger(__name__)

MIN_VARIANCE = 1e-300
MAX_SWEEPS = 100
CONVERGENCE_TOL = 1e-12
# an off-diagonal entry this small next to its diagonal pair is already zero
NEGLIGIBLE = np.finfo(np.float64).eps * 1e-3
TINY = np.finfo(np.float64).tiny
# singular values below this fraction of the largest are numerical zeros
RANK_RTOL = 1e-10
DEFAULT_EXPLAINED = 0.9


@dataclass(frozen=True)
class CorrelationMatrix:
    R: np.ndarray
    source_mode: CovarianceMode

    @property
    def dim(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class PcaResult:
    """Full decomposition R = U·diag(σ)·Vᵀ plus retained-component scores."""

    singular_values: np.ndarray
    components: np.ndarray
    right_vectors: np.ndarray
    explained: np.ndarray
    source_mode: CovarianceMode
    scores: np.ndarray | None = None
    k: int | None = None

    @property
    def dim(self) -> int:
        return self.singular_values.shape[0]

    @property
    def rank(self) -> int:
        if self.dim == 0:
            return 0
        tol = self.singular_values[0] * RANK_RTOL
        return int(np.count_nonzero(self.singular_values > tol))

    def with_scores(self, scores: np.ndarray, k: int) -> "PcaResult":
        scores = np.array(scores, dtype=np.float64)
        scores.setflags(write=False)
        return PcaResult(
            singular_values=self.singular_values,
            components=self.components,
            right_vectors=self.right_vectors,
            explained=self.explained,
            source_mode=self.source_mode,
            scores=scores,
            k=k,
        )


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def correlation_from_covariance(cov: CovarianceResult) -> CorrelationMatrix:
    """R[i, j] = C[i, j] / (s[i]·s[j]).

    Raises:
        ZeroVarianceError: some s[i]² is below 1e-300.
    """
    diag = np.diag(cov.C)
    bad = np.flatnonzero(diag < MIN_VARIANCE)
    if bad.size:
        index = int(bad[0])
        raise ZeroVarianceError(index, float(diag[index]))
    s = np.sqrt(diag)
    R = cov.C / np.outer(s, s)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    np.clip(R, -1.0, 1.0, out=R)
    return CorrelationMatrix(R=_frozen(R), source_mode=cov.mode)


def off_diagonal_norm(a: np.ndarray) -> float:
    """Frobenius norm of the strict off-diagonal part, summed directly."""
    upper = a[np.triu_indices(a.shape[0], k=1)]
    return float(np.sqrt(2.0) * np.linalg.norm(upper))


def jacobi_eigh(
    matrix: np.ndarray,
    max_sweeps: int = MAX_SWEEPS,
    tol: float = CONVERGENCE_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a real symmetric matrix.

    Returns (eigenvalues, eigenvectors) in Jacobi output order (columns of the
    accumulated rotation). Converged when the off-diagonal Frobenius norm is at
    most tol·‖matrix‖_F.

    Raises:
        ConvergenceError: still above tolerance after max_sweeps sweeps.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    v = np.eye(n)
    target = tol * float(np.linalg.norm(a))

    for _sweep in range(max_sweeps):
        if off_diagonal_norm(a) <= target:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                diag_scale = abs(a[p, p]) + abs(a[q, q])
                if abs(apq) <= NEGLIGIBLE * diag_scale or abs(apq) < TINY:
                    a[p, q] = a[q, p] = 0.0
                    continue
                # |theta| stays below 1/(2·NEGLIGIBLE), so theta² cannot overflow
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q]
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    residual = off_diagonal_norm(a)
    if residual <= target:
        return np.diag(a).copy(), v
    raise ConvergenceError(max_sweeps, residual)


def _fix_signs(u: np.ndarray) -> np.ndarray:
    """+1/-1 per column so each column's largest-magnitude entry is positive."""
    if u.size == 0:
        return np.ones(u.shape[1])
    lead = np.argmax(np.abs(u), axis=0)  # first index on ties
    signs = np.sign(u[lead, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def svd(corr: CorrelationMatrix) -> PcaResult:
    """Full SVD of the correlation matrix with a deterministic sign convention.

    Singular values are sorted nonincreasing; ties keep the Jacobi output
    order (stable sort).
    """
    eigenvalues, vectors = jacobi_eigh(corr.R)
    singular = np.abs(eigenvalues)
    order = np.argsort(-singular, kind="stable")
    singular = singular[order]
    u = vectors[:, order]
    u = u * _fix_signs(u)
    eig_signs = np.sign(eigenvalues[order])
    eig_signs[eig_signs == 0] = 1.0
    v = u * eig_signs

    total = float(np.sum(singular))
    explained = singular / total if total > 0 else np.zeros_like(singular)
    logger.info(
        f"SVD of {corr.dim}x{corr.dim} correlation matrix: "
        f"leading singular values {np.round(singular[:3], 6).tolist()}"
    )
    return PcaResult(
        singular_values=_frozen(singular),
        components=_frozen(u),
        right_vectors=_frozen(v),
        explained=_frozen(explained),
        source_mode=corr.source_mode,
    )


def choose_components(explained: np.ndarray, target: float = DEFAULT_EXPLAINED) -> int:
    """Smallest k whose cumulative explained fraction reaches `target`."""
    if not 0 < target <= 1:
        raise ValueError(f"explained target must be in (0, 1], got {target}")
    cumulative = np.cumsum(explained)
    # tolerate rounding in the final cumulative sum
    hits = np.flatnonzero(cumulative >= target - 1e-12)
    return int(hits[0]) + 1 if hits.size else len(explained)


def _pixel_scores(
    amat: DataMatrix, basis: np.ndarray, s: np.ndarray, chunk_id: int
) -> dict[int, np.ndarray]:
    standardized = amat.chunk(chunk_id) / s[:, np.newaxis]
    return {chunk_id: (basis.T @ standardized).T}


def _merge_rows(
    a: dict[int, np.ndarray], b: dict[int, np.ndarray]
) -> dict[int, np.ndarray]:
    return {**a, **b}


def project_scores(
    amat: DataMatrix,
    pca: PcaResult,
    cov: CovarianceResult,
    k: int,
    workers: int = 1,
    executor: ExecutorKind = "thread",
) -> np.ndarray:
    """M×k eigenspace coordinates, rows in manifest order.

    Gram mode: rows of U_k·Σ_k^½. Pixel mode: U_kᵀ·(Φⱼ/s) for each image,
    computed chunk by chunk through map-reduce.
    """
    if pca.source_mode != cov.mode:
        raise ValueError(
            f"PCA was computed from {pca.source_mode!r} covariance, got {cov.mode!r}"
        )
    if not 1 <= k <= pca.rank:
        raise ValueError(
            f"k out of range: must be in [1, {pca.rank}] (rank of the "
            f"{pca.dim}x{pca.dim} correlation matrix), got {k}"
        )

    if cov.mode == "gram":
        if cov.M != amat.M:
            raise ValueError(f"covariance covers {cov.M} images, data matrix {amat.M}")
        scores = pca.components[:, :k] * np.sqrt(pca.singular_values[:k])
        return _frozen(np.array(scores))

    if cov.N2 != amat.N2:
        raise ValueError(f"covariance covers {cov.N2} pixels, data matrix {amat.N2}")
    if np.any(cov.s < np.sqrt(MIN_VARIANCE)):
        raise ZeroVarianceError(int(np.argmin(cov.s)), float(np.min(cov.s) ** 2))
    basis = np.ascontiguousarray(pca.components[:, :k])
    blocks = run(
        MapReduceJob(
            chunk_source=amat.store,
            map_fn=partial(_pixel_scores, amat, basis, np.asarray(cov.s)),
            reduce_fn=_merge_rows,
            identity={},
            workers=workers,
            executor=executor,
        )
    )
    scores = np.concatenate(
        [blocks[info.chunk_id] for info in amat.store.chunks], axis=0
    )
    return _frozen(scores)


def save_pca(pca: PcaResult, directory: str | Path, ids: list[str] | None = None) -> Path:
    """Write pca.json (spectrum) plus components.f64 and scores.f64."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pca.components.astype(STORE_DTYPE).tofile(directory / "components.f64")
    payload: dict[str, object] = {
        "source_mode": pca.source_mode,
        "dim": pca.dim,
        "singular_values": [float(x) for x in pca.singular_values],
        "explained": [float(x) for x in pca.explained],
        "eigen_signs": [
            1.0 if float(u @ v) >= 0 else -1.0
            for u, v in zip(pca.components.T, pca.right_vectors.T)
        ],
        "k": pca.k,
    }
    if pca.scores is not None:
        pca.scores.astype(STORE_DTYPE).tofile(directory / "scores.f64")
        payload["scores_shape"] = list(pca.scores.shape)
    if ids is not None:
        payload["image_ids"] = ids
    target = directory / "pca.json"
    target.write_text(json.dumps(payload, indent=2) + "\n")
    return target


def load_pca(directory: str | Path) -> PcaResult:
    directory = Path(directory)
    payload = json.loads((directory / "pca.json").read_text())
    dim = int(payload["dim"])
    singular = np.asarray(payload["singular_values"], dtype=np.float64)
    components = np.fromfile(directory / "components.f64", dtype=STORE_DTYPE)
    components = components.reshape(dim, dim).astype(np.float64)
    pca = PcaResult(
        singular_values=_frozen(singular),
        components=_frozen(components),
        right_vectors=_frozen(components * np.asarray(payload["eigen_signs"])),
        explained=_frozen(np.asarray(payload["explained"], dtype=np.float64)),
        source_mode=payload["source_mode"],
    )
    if "scores_shape" in payload:
        rows, cols = payload["scores_shape"]
        scores = np.fromfile(directory / "scores.f64", dtype=STORE_DTYPE)
        pca = pca.with_scores(scores.reshape(rows, cols), int(payload["k"]))
    return pca

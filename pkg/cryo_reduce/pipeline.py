"""End-to-end dimension-reduction pipeline.

ingest -> center -> covariance -> correlation -> svd -> project -> classify
-> upload -> report. Each stage runs inside `StageTimer.stage`, which times it, emits a
structured event and re-raises any failure as a stage-tagged StageError.
The stage functions are also used on their own by the CLI subcommands.
"""

import logging
import time
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from cryo_reduce.app_utils import artifacts
from cryo_reduce.app_utils.errors import ObjectStoreError, StageError
from cryo_reduce.app_utils.object_store import ObjectStoreClient, open_store
from cryo_reduce.app_utils.telemetry import EventLogger
from cryo_reduce.app_utils.typing import CovarianceMode, PipelineConfig, TriageReport
from cryo_reduce.stages.cost_model import load_pricing
from cryo_reduce.stages.covariance_engine import (
    CovarianceResult,
    DataMatrix,
    center,
    compute_mean,
    covariance,
    save_covariance,
    uncentered,
)
from cryo_reduce.stages.mapreduce_core import ExecutorKind
from cryo_reduce.stages.mrc_ingest import (
    STORE_DTYPE,
    DataStore,
    build_datastore,
    load_inputs,
)
from cryo_reduce.stages.pca_engine import (
    PcaResult,
    choose_components,
    correlation_from_covariance,
    project_scores,
    save_pca,
    svd,
)
from cryo_reduce.stages.synth import TRUTH_NAME
from cryo_reduce.stages.triage import classify, evaluate_truth, load_truth

logger = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "center",
    "covariance",
    "correlation",
    "svd",
    "project",
    "classify",
    "upload",
    "report",
)
DATASTORE_DIR = "datastore"
KEEP_PREFIX = "keep/"
REPORT_PREFIX = "reports/"
SCORES_NAME = "scores.csv"
REPORT_NAME = "report.json"
SCATTER_NAME = "scatter.svg"
TIMINGS_NAME = "timings.json"
PCA_SCORES_NAME = "pca_scores.csv"


@dataclass
class StageTimer:
    """Collects per-stage wall time and forwards one event per stage."""

    events: EventLogger
    timings: dict[str, float] = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str, **counters: Any) -> Iterator[dict[str, Any]]:
        extra: dict[str, Any] = dict(counters)
        start = time.perf_counter()
        try:
            yield extra
        except StageError:
            raise
        except Exception as e:
            self.events.log_struct(
                {"stage": name, "status": "failed", "error": str(e)}, severity="ERROR"
            )
            raise StageError(name, e) from e
        elapsed = time.perf_counter() - start
        self.timings[name] = round(elapsed, 6)
        self.events.log_struct(
            {"stage": name, "status": "ok", "elapsed_s": round(elapsed, 6), **extra}
        )


@dataclass(frozen=True)
class ReduceOutcome:
    amat: DataMatrix
    covariance: CovarianceResult
    pca: PcaResult
    scores: np.ndarray
    k: int


@dataclass(frozen=True)
class UploadOutcome:
    store: str
    uploaded: list[str]
    failed: list[str]

    def as_report(self) -> dict[str, Any]:
        return {"store": self.store, "uploaded": self.uploaded, "failed": self.failed}


@dataclass(frozen=True)
class PipelineResult:
    report: TriageReport
    payload: dict[str, Any]
    output_dir: Path
    timings: dict[str, float]
    upload: UploadOutcome | None = None


def ingest_stage(
    inputs: Sequence[str], output_dir: Path, chunk_images: int, workers: int = 1
) -> DataStore:
    records = load_inputs(inputs, workers=workers)
    return build_datastore(records, chunk_images, output_dir / DATASTORE_DIR)


def reduce_stage(
    store: DataStore,
    *,
    mode: CovarianceMode = "gram",
    centered: bool = True,
    components: int | None = None,
    explained: float = 0.9,
    workers: int = 1,
    executor: ExecutorKind = "thread",
    memory_budget_bytes: int = 2 * 1024**3,
    timer: StageTimer | None = None,
) -> ReduceOutcome:
    """Mean/center, covariance, correlation, SVD and projection on one store."""
    timer = timer or StageTimer(EventLogger())

    with timer.stage("center", centered=centered):
        if centered:
            amat = center(store, compute_mean(store, workers, executor))
        else:
            amat = uncentered(store)

    with timer.stage("covariance", mode=mode) as info:
        cov = covariance(amat, mode, workers, executor, memory_budget_bytes)
        info["dim"] = cov.dim

    with timer.stage("correlation"):
        corr = correlation_from_covariance(cov)

    with timer.stage("svd") as info:
        pca = svd(corr)
        info["rank"] = pca.rank

    with timer.stage("project") as info:
        if components is not None:
            if components > pca.rank:
                raise ValueError(
                    f"k out of range: --components {components} exceeds the rank "
                    f"{pca.rank} of the {pca.dim}x{pca.dim} correlation matrix"
                )
            k = components
        else:
            # null components carry no signal, only rounding noise
            k = min(choose_components(pca.explained, explained), pca.rank)
        scores = project_scores(amat, pca, cov, k, workers, executor)
        pca = pca.with_scores(scores, k)
        info["k"] = k

    return ReduceOutcome(amat=amat, covariance=cov, pca=pca, scores=scores, k=k)


def save_reduction(outcome: ReduceOutcome, store: DataStore, output_dir: Path) -> None:
    save_covariance(outcome.covariance, output_dir)
    save_pca(outcome.pca, output_dir, ids=store.ids)
    artifacts.write_text(
        output_dir / PCA_SCORES_NAME, artifacts.pca_scores_csv(store.ids, outcome.scores)
    )


def find_truth(inputs: Sequence[str]) -> Path | None:
    """A generator `truth.csv` next to (or inside) the first input that has one."""
    for pattern in inputs:
        path = Path(pattern)
        candidate = (path if path.is_dir() else path.parent) / TRUTH_NAME
        if candidate.is_file():
            return candidate
    return None


def resolve_store(descriptor: str, output_dir: Path, retries: int) -> ObjectStoreClient:
    """Open `local:<dir>`; a relative dir is taken relative to the output dir."""
    backend, _, location = descriptor.partition(":")
    if backend == "local" and location and not Path(location).is_absolute():
        descriptor = f"local:{output_dir / location}"
    return open_store(descriptor, retries=retries)


def upload_keep(
    store: DataStore,
    report: TriageReport,
    client: ObjectStoreClient,
    parallel: bool = False,
    workers: int = 4,
) -> tuple[list[str], list[str]]:
    """Upload every KEEP image as raw little-endian float64 bytes.

    Returns the sorted uploaded and failed keys; failures do not stop the
    remaining uploads.
    """
    keep = set(report.kept_ids)
    payloads = [
        (f"{KEEP_PREFIX}{image_id}.f64", vector.astype(STORE_DTYPE).tobytes())
        for image_id, vector in store.iter_vectors()
        if image_id in keep
    ]

    def put(item: tuple[str, bytes]) -> tuple[str, bool]:
        key, data = item
        try:
            client.put(key, data)
        except ObjectStoreError as e:
            logger.error(f"Upload failed for {key}: {e}")
            return key, False
        return key, True

    if parallel and len(payloads) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(put, payloads))
    else:
        outcomes = [put(item) for item in payloads]

    uploaded = sorted(key for key, ok in outcomes if ok)
    failed = sorted(key for key, ok in outcomes if not ok)
    return uploaded, failed


def triage_outputs(
    report: TriageReport,
    *,
    mode: str,
    centered: bool,
    stages: Sequence[str],
    pricing_path: Path | None = None,
    truth_path: Path | None = None,
    upload: UploadOutcome | None = None,
    timings_file: str | None = None,
) -> tuple[dict[str, Any], dict[str, str]]:
    """Build the report payload and render the three report files."""
    pricing = None
    if pricing_path is not None:
        pricing = artifacts.pricing_block(load_pricing(pricing_path), report)
    truth = None
    if truth_path is not None:
        truth = evaluate_truth(report, load_truth(truth_path))
    payload = artifacts.build_report(
        report,
        mode=mode,
        centered=centered,
        stages=stages,
        pricing=pricing,
        upload=upload.as_report() if upload is not None else None,
        truth=truth,
        timings_file=timings_file,
    )
    files = {
        SCORES_NAME: artifacts.scores_csv(report),
        REPORT_NAME: artifacts.report_json(payload),
        SCATTER_NAME: artifacts.scatter_svg(report),
    }
    return payload, files


def run_pipeline(cfg: PipelineConfig, events: EventLogger | None = None) -> PipelineResult:
    """Run every stage, upload KEEP images and the three reports.

    Raises:
        StageError: tagged with the failing stage. When some uploads fail the
            reports are still written (and record the failed keys) before the
            error is raised.
    """
    timer = StageTimer(events or EventLogger())
    output_dir = Path(cfg.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running pipeline on {len(cfg.inputs)} input(s) into {output_dir}")

    with timer.stage("ingest") as info:
        store = ingest_stage(cfg.inputs, output_dir, cfg.chunk_images, cfg.workers)
        info["images"] = store.image_count
        info["chunks"] = len(store.chunks)

    outcome = reduce_stage(
        store,
        mode=cfg.mode,
        centered=cfg.center,
        components=cfg.components,
        explained=cfg.explained,
        workers=cfg.workers,
        executor=cfg.executor,
        memory_budget_bytes=cfg.memory_budget_bytes,
        timer=timer,
    )

    with timer.stage("classify") as info:
        report = classify(store, outcome.scores, cfg.threshold)
        info["kept"] = len(report.kept_ids)
        info["discarded"] = len(report.discarded_ids)

    with timer.stage("upload") as info:
        client = resolve_store(cfg.store, output_dir, cfg.upload_retries)
        uploaded, failed = upload_keep(
            store, report, client, cfg.parallel_uploads, max(cfg.workers, 1)
        )
        upload = UploadOutcome(store=cfg.store, uploaded=uploaded, failed=failed)
        info["uploaded"] = len(uploaded)
        info["failed"] = len(failed)

    with timer.stage("report"):
        payload, files = triage_outputs(
            report,
            mode=cfg.mode,
            centered=cfg.center,
            stages=STAGES,
            pricing_path=cfg.pricing_path,
            truth_path=find_truth(cfg.inputs),
            upload=upload,
            timings_file=TIMINGS_NAME,
        )
        for name, text in files.items():
            artifacts.write_text(output_dir / name, text)
        for name, text in files.items():
            client.put(f"{REPORT_PREFIX}{name}", text.encode())

    artifacts.write_text(output_dir / TIMINGS_NAME, artifacts.timings_json(timer.timings))

    if failed:
        raise StageError(
            "upload",
            ObjectStoreError(f"{len(failed)} of {len(report.kept_ids)} KEEP uploads failed"),
        )
    logger.info(
        f"Pipeline done: kept {len(report.kept_ids)}/{len(report.rows)} images "
        f"({report.kept_fraction:.1%})"
    )
    return PipelineResult(
        report=report,
        payload=payload,
        output_dir=output_dir,
        timings=timer.timings,
        upload=upload,
    )

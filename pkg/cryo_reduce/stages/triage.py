"""Triage stage: pick the good images from their eigenspace scores.

The decision rule is a robust (median/MAD) standardized distance over the
retained components; images farther than the threshold are discarded. The
rule is this project's reconstruction, the scatter it replaces has no
stated criterion.
"""

import csv
import logging
from pathlib import Path

import numpy as np

from cryo_reduce.app_utils.errors import InsufficientPopulationError
from cryo_reduce.app_utils.typing import Label, TriageReport, TriageRow
from cryo_reduce.stages.mrc_ingest import DataStore

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 3.5
MAD_SCALE = 0.6745
MAD_FLOOR = 1e-12
MIN_POPULATION = 3


def robust_distance(scores: np.ndarray) -> np.ndarray:
    """Per-image RMS of modified z-scores across the k score columns.

    z_ic = 0.6745·(x_ic − median_c) / MAD_c, distance_i = sqrt(Σ_c z_ic² / k).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, np.newaxis]
    M, k = scores.shape
    if M < MIN_POPULATION:
        raise InsufficientPopulationError(M, MIN_POPULATION)
    if k < 1:
        raise ValueError("scores need at least one component")

    median = np.median(scores, axis=0)
    mad = np.median(np.abs(scores - median), axis=0)
    mad = np.maximum(mad, MAD_FLOOR)
    z = MAD_SCALE * (scores - median) / mad
    return np.sqrt(np.sum(z * z, axis=1) / k)


def classify(
    store: DataStore, scores: np.ndarray, threshold: float = DEFAULT_THRESHOLD
) -> TriageReport:
    """Label every image KEEP or DISCARD (distance > threshold).

    Args:
        store: Datastore whose manifest order matches the score rows.
        scores: M×k eigenspace coordinates.
        threshold: Robust-distance cut, > 0 (may be +inf).
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, np.newaxis]
    if scores.shape[0] != store.image_count:
        raise ValueError(
            f"{scores.shape[0]} score rows for {store.image_count} images"
        )

    distances = robust_distance(scores)
    rows = []
    kept_bytes = discarded_bytes = 0
    for meta, row, distance in zip(store.manifest, scores, distances):
        label = Label.DISCARD if distance > threshold else Label.KEEP
        if label is Label.KEEP:
            kept_bytes += meta.nbytes
        else:
            discarded_bytes += meta.nbytes
        rows.append(
            TriageRow(
                image_id=meta.id,
                scores=[float(x) for x in row],
                distance=float(distance),
                label=label,
                nbytes=meta.nbytes,
            )
        )

    report = TriageReport(
        rows=rows,
        threshold=float(threshold),
        k=scores.shape[1],
        kept_bytes=kept_bytes,
        discarded_bytes=discarded_bytes,
    )
    logger.info(
        f"Triage: {len(report.kept_ids)} KEEP, {len(report.discarded_ids)} DISCARD "
        f"(threshold {threshold}, k={report.k})"
    )
    return report


def load_truth(path: str | Path) -> dict[str, str]:
    """Read a ground-truth file (`image_id,label`) written by the generator."""
    with Path(path).open(newline="") as f:
        return {row["image_id"]: row["label"] for row in csv.DictReader(f)}


def evaluate_truth(report: TriageReport, truth: dict[str, str]) -> dict[str, int]:
    """Count planted junk that was discarded and good images discarded by mistake."""
    junk = {image_id for image_id, label in truth.items() if label == "junk"}
    discarded = set(report.discarded_ids)
    return {
        "planted_junk": len(junk),
        "junk_discarded": len(junk & discarded),
        "false_discards": len(discarded - junk),
    }

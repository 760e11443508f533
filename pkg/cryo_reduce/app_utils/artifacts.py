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
"""Writers for the run artifacts: scores.csv, report.json, scatter.svg.

Every writer renders to text first so the same bytes can go both to the
output directory and to the object store. Floats are written with `repr`
(shortest round-trip form); nothing time-dependent ends up in these files.
"""

import csv
import io
import json
import math
from collections.abc import Sequence
from decimal import Decimal
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape

import numpy as np

from cryo_reduce.app_utils.typing import Label, PricingScheme, TriageReport
from cryo_reduce.stages.cost_model import reduction_savings

REPORT_SCHEMA_VERSION = 1
DISCARD_POLICY = "DISCARD images are kept locally and not uploaded"
BYTES_PER_GB = Decimal(10**9)

SVG_WIDTH = 480
SVG_HEIGHT = 360
SVG_MARGIN = 40
KEEP_COLOR = "#1f77b4"
DISCARD_COLOR = "#d62728"


def format_float(value: float) -> str:
    return repr(float(value))


def _json_number(value: float) -> float | str:
    # JSON has no infinity literal
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return float(value)


def scores_csv(report: TriageReport) -> str:
    """`image_id,pc1..pck,distance,label`, one row per image in manifest order."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["image_id", *(f"pc{c + 1}" for c in range(report.k)), "distance", "label"]
    )
    for row in report.rows:
        writer.writerow(
            [
                row.image_id,
                *(format_float(x) for x in row.scores),
                format_float(row.distance),
                row.label.value,
            ]
        )
    return buffer.getvalue()


def pca_scores_csv(ids: Sequence[str], scores: np.ndarray) -> str:
    """Eigenspace coordinates without triage columns (`reduce` output)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, np.newaxis]
    if len(ids) != scores.shape[0]:
        raise ValueError(f"{len(ids)} ids for {scores.shape[0]} score rows")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["image_id", *(f"pc{c + 1}" for c in range(scores.shape[1]))])
    for image_id, row in zip(ids, scores):
        writer.writerow([image_id, *(format_float(x) for x in row)])
    return buffer.getvalue()


def pricing_block(
    schemes: Sequence[PricingScheme], report: TriageReport, months: int = 1
) -> dict[str, Any]:
    """Echo of the pricing file plus the storage saved by discarding."""
    before_gb = Decimal(report.total_bytes) / BYTES_PER_GB
    after_gb = Decimal(report.kept_bytes) / BYTES_PER_GB
    return {
        "schemes": [scheme.model_dump(mode="json") for scheme in schemes],
        "storage_months": months,
        "storage_savings": {
            scheme.name.value: str(
                reduction_savings(before_gb, after_gb, scheme.storage_rate, months)
            )
            for scheme in schemes
        },
    }


def build_report(
    report: TriageReport,
    *,
    mode: str,
    centered: bool,
    stages: Sequence[str],
    pricing: dict[str, Any] | None = None,
    upload: dict[str, Any] | None = None,
    truth: dict[str, int] | None = None,
    timings_file: str | None = None,
) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "summary": {
            "threshold": _json_number(report.threshold),
            "k": report.k,
            "mode": mode,
            "centered": centered,
            "image_count": len(report.rows),
            "kept_count": len(report.kept_ids),
            "discarded_count": len(report.discarded_ids),
            "kept_fraction": report.kept_fraction,
            "kept_bytes": report.kept_bytes,
            "discarded_bytes": report.discarded_bytes,
            "total_bytes": report.total_bytes,
        },
        "stages": list(stages),
        "discard_policy": DISCARD_POLICY,
        "discarded_ids": report.discarded_ids,
    }
    if pricing is not None:
        payload["pricing"] = pricing
    if upload is not None:
        payload["upload"] = upload
    if truth is not None:
        payload["truth"] = truth
    if timings_file is not None:
        # timings change on every run, so only their location is recorded here
        payload["artifacts"] = {"timings": timings_file}
    return payload


def report_json(payload: dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def timings_json(timings: dict[str, float]) -> str:
    return json.dumps({"elapsed_s": timings}, indent=2) + "\n"


def _axis_range(values: np.ndarray) -> tuple[float, float]:
    low, high = float(np.min(values)), float(np.max(values))
    if high - low < 1e-12:
        return low - 1.0, high + 1.0
    pad = 0.05 * (high - low)
    return low - pad, high + pad


def scatter_svg(report: TriageReport) -> str:
    """PC1 vs PC2 scatter; DISCARD points drawn as red crosses.

    With a single retained component the second axis is zero.
    """
    pc1 = np.array([row.scores[0] for row in report.rows], dtype=np.float64)
    pc2 = np.array(
        [row.scores[1] if len(row.scores) > 1 else 0.0 for row in report.rows],
        dtype=np.float64,
    )
    x_lo, x_hi = _axis_range(pc1) if pc1.size else (-1.0, 1.0)
    y_lo, y_hi = _axis_range(pc2) if pc2.size else (-1.0, 1.0)
    plot_w = SVG_WIDTH - 2 * SVG_MARGIN
    plot_h = SVG_HEIGHT - 2 * SVG_MARGIN

    def sx(x: float) -> float:
        return SVG_MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return SVG_HEIGHT - SVG_MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<rect x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="black"/>',
        f'<text x="{SVG_WIDTH / 2:.0f}" y="{SVG_HEIGHT - 8}" text-anchor="middle" '
        'font-size="12">PC1</text>',
        f'<text x="12" y="{SVG_HEIGHT / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {SVG_HEIGHT / 2:.0f})">PC2</text>',
        f'<text x="{SVG_MARGIN}" y="{SVG_MARGIN - 10}" font-size="12">'
        f"KEEP {len(report.kept_ids)} / DISCARD {len(report.discarded_ids)}</text>",
    ]
    for row, x, y in zip(report.rows, pc1, pc2):
        px, py = sx(float(x)), sy(float(y))
        if row.label is Label.KEEP:
            lines.append(
                f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{KEEP_COLOR}">'
                f"<title>{escape(row.image_id)}</title></circle>"
            )
        else:
            lines.append(
                f'<path d="M{px - 4:.2f},{py - 4:.2f} L{px + 4:.2f},{py + 4:.2f} '
                f'M{px - 4:.2f},{py + 4:.2f} L{px + 4:.2f},{py - 4:.2f}" '
                f'stroke="{DISCARD_COLOR}" stroke-width="2" class="discard">'
                f"<title>{escape(row.image_id)}</title></path>"
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path

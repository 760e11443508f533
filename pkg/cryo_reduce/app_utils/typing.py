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
"""Pydantic models shared across stages: records, manifests, reports, pricing."""

import math
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)

CovarianceMode = Literal["pixel", "gram"]


class ImageSource(BaseModel):
    """Where an image came from: file path plus section/frame index."""

    model_config = ConfigDict(frozen=True)

    path: str
    frame: int = Field(default=0, ge=0)


class ImageMeta(BaseModel):
    """Manifest entry for one image (everything but the pixels)."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    source: ImageSource
    nbytes: int = Field(ge=0)

    @property
    def vector_length(self) -> int:
        return self.width * self.height


class ImageRecord(BaseModel):
    """One micrograph (or movie frame) with its pixel matrix."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    id: str = Field(min_length=1)
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    pixels: np.ndarray
    source: ImageSource
    nbytes: int = Field(default=-1)

    @model_validator(mode="after")
    def _check_pixels(self) -> "ImageRecord":
        pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if pixels.shape != (self.height, self.width):
            raise ValueError(
                f"image {self.id!r}: pixels shape {pixels.shape} does not match "
                f"height×width ({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(pixels)):
            raise ValueError(f"image {self.id!r}: non-finite pixel values")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        if self.nbytes < 0:
            object.__setattr__(self, "nbytes", pixels.nbytes)
        return self

    @property
    def meta(self) -> ImageMeta:
        return ImageMeta(
            id=self.id,
            width=self.width,
            height=self.height,
            source=self.source,
            nbytes=self.nbytes,
        )


class ChunkInfo(BaseModel):
    """One datastore chunk: a contiguous run of whole images (columns of A)."""

    model_config = ConfigDict(frozen=True)

    chunk_id: int = Field(ge=0)
    start: int = Field(ge=0)
    stop: int = Field(ge=1)
    first_id: str
    last_id: str
    path: str
    byte_offset: int = Field(ge=0)
    byte_length: int = Field(ge=0)

    @property
    def size(self) -> int:
        return self.stop - self.start


class Label(str, Enum):
    KEEP = "KEEP"
    DISCARD = "DISCARD"


class TriageRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_id: str
    scores: list[float]
    distance: float
    label: Label
    nbytes: int


class TriageReport(BaseModel):
    """Per-image KEEP/DISCARD decisions plus byte totals."""

    model_config = ConfigDict(frozen=True)

    rows: list[TriageRow]
    threshold: float
    k: int
    kept_bytes: int
    discarded_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.kept_bytes + self.discarded_bytes

    @property
    def kept_fraction(self) -> float:
        if not self.rows:
            return 0.0
        return sum(row.label is Label.KEEP for row in self.rows) / len(self.rows)

    @property
    def kept_ids(self) -> list[str]:
        return [row.image_id for row in self.rows if row.label is Label.KEEP]

    @property
    def discarded_ids(self) -> list[str]:
        return [row.image_id for row in self.rows if row.label is Label.DISCARD]


class SchemeName(str, Enum):
    ON_DEMAND = "on_demand"
    SPOT = "spot"
    RESERVED = "reserved"
    DEDICATED = "dedicated"


class PricingScheme(BaseModel):
    """A cloud purchasing model: hourly compute, upfront fee, storage rate."""

    model_config = ConfigDict(frozen=True)

    name: SchemeName
    compute_rate: Decimal = Field(ge=0, description="dollars per instance-hour")
    upfront: Decimal = Field(default=Decimal(0), ge=0, description="dollars")
    storage_rate: Decimal = Field(ge=0, description="dollars per GB-month")

    @model_validator(mode="after")
    def _spot_has_no_upfront(self) -> "PricingScheme":
        if self.name is SchemeName.SPOT and self.upfront != 0:
            raise ValueError("spot pricing has no upfront cost")
        return self


class Workload(BaseModel):
    """What is being priced: data volume plus the compute used to reduce it."""

    model_config = ConfigDict(frozen=True)

    data_gb: Decimal = Field(ge=0)
    compute_hours: Decimal = Field(ge=0)
    instance_count: int = Field(ge=0)
    storage_months: Decimal = Field(ge=0)


class CostBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    compute: Decimal
    storage: Decimal
    upfront: Decimal


class CostEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    scheme: SchemeName
    data_gb: Decimal
    compute_hours: Decimal
    instance_count: int
    storage_months: Decimal
    total_dollars: Decimal
    breakdown: CostBreakdown


class RankedEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: CostEstimate
    savings_pct: Decimal


class PipelineConfig(BaseModel):
    """Everything one pipeline run needs."""

    model_config = ConfigDict(frozen=True)

    inputs: list[str] = Field(min_length=1)
    output_dir: Path
    chunk_images: int = Field(default=16, ge=1)
    workers: int = Field(default=1, ge=1)
    executor: Literal["thread", "process"] = "thread"
    mode: CovarianceMode = "gram"
    center: bool = True
    components: int | None = Field(default=None, ge=1)
    explained: float = Field(default=0.9, gt=0, le=1)
    threshold: float = Field(default=3.5, gt=0)
    pricing_path: Path | None = None
    store: str = "local:store"
    memory_budget_bytes: int = Field(default=2 * 1024**3, ge=1)
    parallel_uploads: bool = False
    upload_retries: int = Field(default=3, ge=1)

    @field_validator("threshold")
    @classmethod
    def _threshold_not_nan(cls, value: float) -> float:
        if math.isnan(value):
            raise ValueError("threshold must be a number")
        return value

    @field_validator("store")
    @classmethod
    def _known_backend(cls, value: str) -> str:
        backend = value.split(":", 1)[0]
        if backend != "local":
            raise ValueError(
                f"unsupported store backend {backend!r} (only 'local:<dir>' ships)"
            )
        return value

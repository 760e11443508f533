"""Seeded synthetic micrograph stacks with planted junk, plus ground truth.

Good images: a shared ice background with particles (smooth Gaussian blobs)
placed at random inside a jittered grid, plus low noise. Junk images are
either uniform noise or a steep "carbon" gradient. Pixel values are rounded to
float32 so a stack written as MRC mode 2 reloads bit-exactly.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cryo_reduce.app_utils.typing import ImageRecord, ImageSource
from cryo_reduce.stages.mrc_ingest import RAW_MANIFEST_NAME, STORE_DTYPE, write_mrc

logger = logging.getLogger(__name__)

TRUTH_NAME = "truth.csv"
MIN_SIZE = 4
ICE_LEVEL = 10.0
ICE_TILT = 0.5
PARTICLE_AMPLITUDE = 1.5
PARTICLE_CELL = 8
GOOD_NOISE = 0.05
JUNK_NOISE_HALF_RANGE = 2.0
CARBON_RAMP = 3.0


@dataclass(frozen=True)
class SynthStack:
    records: list[ImageRecord]
    truth: dict[str, str]
    paths: list[Path] = field(default_factory=list)


def _grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.mgrid[0:height, 0:width]
    return rows.astype(np.float64), cols.astype(np.float64)


def _ice_background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    rows, cols = _grid(width, height)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * cols / max(width - 1, 1) + np.sin(angle) * rows / max(height - 1, 1)
    return ICE_LEVEL + ICE_TILT * ramp


def _good_image(
    rng: np.random.Generator, background: np.ndarray, width: int, height: int
) -> np.ndarray:
    rows, cols = _grid(width, height)
    nx = max(1, width // PARTICLE_CELL)
    ny = max(1, height // PARTICLE_CELL)
    cell_w, cell_h = width / nx, height / ny
    sigma = max(0.5, min(cell_w, cell_h) / 6)
    image = background.copy()
    for gy in range(ny):
        for gx in range(nx):
            cy = (gy + rng.uniform(0.25, 0.75)) * cell_h
            cx = (gx + rng.uniform(0.25, 0.75)) * cell_w
            image += PARTICLE_AMPLITUDE * np.exp(
                -((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2)
            )
    return image + rng.normal(0.0, GOOD_NOISE, size=image.shape)


def _junk_image(
    rng: np.random.Generator, kind: str, width: int, height: int
) -> np.ndarray:
    if kind == "noise":
        return rng.uniform(-JUNK_NOISE_HALF_RANGE, JUNK_NOISE_HALF_RANGE, size=(height, width))
    rows, cols = _grid(width, height)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * cols / max(width - 1, 1) + np.sin(angle) * rows / max(height - 1, 1)
    return CARBON_RAMP * (ramp - ramp.min()) + rng.normal(0.0, GOOD_NOISE, size=ramp.shape)


def synth_gen(
    seed: int,
    m_good: int,
    m_junk: int,
    width: int,
    height: int,
    out: str | Path | None = None,
    mrc: bool = False,
) -> SynthStack:
    """Generate a stack of good and junk images, optionally writing it to `out`.

    Args:
        seed: RNG seed; identical seeds give byte-identical output.
        m_good: Number of good images.
        m_junk: Number of junk images (alternating noise / carbon).
        width: Image width in pixels (>= 4).
        height: Image height in pixels (>= 4).
        out: Directory to write into; nothing is written when None.
        mrc: Write one MRC file per image instead of raw float64 + manifest.csv.

    Returns:
        The records (in shuffled, seeded order) and the id -> label truth map.
    """
    if width < MIN_SIZE or height < MIN_SIZE:
        raise ValueError(f"images must be at least {MIN_SIZE}x{MIN_SIZE}")
    if m_good < 0 or m_junk < 0:
        raise ValueError("image counts must be >= 0")
    total = m_good + m_junk
    if total == 0:
        raise ValueError("synthetic stack needs at least one image")

    rng = np.random.default_rng(seed)
    background = _ice_background(rng, width, height)
    labels = ["good"] * m_good + ["junk"] * m_junk
    order = rng.permutation(total)

    images: list[tuple[str, np.ndarray]] = []
    junk_seen = 0
    for position in range(total):
        label = labels[order[position]]
        if label == "good":
            pixels = _good_image(rng, background, width, height)
        else:
            kind = "noise" if junk_seen % 2 == 0 else "carbon"
            junk_seen += 1
            pixels = _junk_image(rng, kind, width, height)
        images.append((label, pixels.astype(np.float32).astype(np.float64)))

    out_dir = Path(out) if out is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    truth = {}
    paths = []
    for index, (label, pixels) in enumerate(images):
        image_id = f"synth_{index:04d}"
        truth[image_id] = label
        if out_dir is None:
            source, nbytes = f"synth://{seed}/{image_id}", pixels.size * 8
        elif mrc:
            path = write_mrc(out_dir / f"{image_id}.mrc", pixels, mode=2)
            source, nbytes = str(path), pixels.size * 4
            paths.append(path)
        else:
            path = out_dir / f"{image_id}.f64"
            pixels.astype(STORE_DTYPE).tofile(path)
            source, nbytes = str(path), pixels.size * 8
            paths.append(path)
        records.append(
            ImageRecord(
                id=image_id,
                width=width,
                height=height,
                pixels=pixels,
                source=ImageSource(path=source, frame=0),
                nbytes=nbytes,
            )
        )

    if out_dir is not None:
        if not mrc:
            with (out_dir / RAW_MANIFEST_NAME).open("w", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(["id", "width", "height", "path"])
                for record in records:
                    writer.writerow([record.id, width, height, f"{record.id}.f64"])
        with (out_dir / TRUTH_NAME).open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["image_id", "label"])
            writer.writerows(truth.items())
        logger.info(f"Wrote {total} synthetic images ({m_junk} junk) to {out_dir}")

    return SynthStack(records=records, truth=truth, paths=paths)

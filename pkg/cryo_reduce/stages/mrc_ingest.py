"""Ingest stage: MRC / raw-matrix readers and the chunked on-disk datastore.

Each 2-D section of an MRC file becomes one ImageRecord. A collection of
records is laid out as a DataStore: whole images (columns of the data matrix)
grouped into chunk files of headerless little-endian float64, plus a JSON
manifest.
"""

import csv
import glob
import json
import logging
import os
import warnings
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import mrcfile
import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from cryo_reduce.app_utils.errors import IngestError
from cryo_reduce.app_utils.typing import ChunkInfo, ImageMeta, ImageRecord, ImageSource

logger = logging.getLogger(__name__)

MRC_HEADER_BYTES = 1024
# mode word -> (numpy dtype without byte order, bytes per pixel)
SUPPORTED_MODES: dict[int, tuple[str, int]] = {
    0: ("i1", 1),
    1: ("i2", 2),
    2: ("f4", 4),
}
MANIFEST_NAME = "manifest.json"
RAW_MANIFEST_NAME = "manifest.csv"
STORE_DTYPE = np.dtype("<f8")


def _image_id(path: Path, frame: int, sections: int) -> str:
    return path.stem if sections == 1 else f"{path.stem}-f{frame:03d}"


def load_mrc(path: str | os.PathLike[str]) -> list[ImageRecord]:
    """Read every section of an MRC2014 file as an ImageRecord.

    Args:
        path: MRC file (single image, image stack or movie).

    Returns:
        One record per section, in section order, pixels as float64.

    Raises:
        IngestError: missing or truncated file, unsupported mode, or a section
            containing NaN/Inf.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"{path}: no such file", path=str(path))

    with warnings.catch_warnings():
        # permissive reads warn instead of raising; problems are reported below
        warnings.simplefilter("ignore")
        try:
            with mrcfile.open(path, mode="r", header_only=True, permissive=True) as mrc:
                header = mrc.header
                nx, ny, nz = int(header.nx), int(header.ny), int(header.nz)
                mode = int(header.mode)
                nsymbt = int(header.nsymbt)
        except (ValueError, OSError) as e:
            raise IngestError(f"{path}: unreadable MRC header: {e}", path=str(path)) from e

    if mode not in SUPPORTED_MODES:
        raise IngestError(
            f"{path}: unsupported MRC mode {mode} (supported: 0=int8, 1=int16, 2=float32)",
            path=str(path),
        )
    if nx < 1 or ny < 1 or nz < 1:
        raise IngestError(f"{path}: invalid dimensions {nx}x{ny}x{nz}", path=str(path))

    _, itemsize = SUPPORTED_MODES[mode]
    expected = MRC_HEADER_BYTES + nsymbt + nx * ny * nz * itemsize
    actual = path.stat().st_size
    if actual < expected:
        raise IngestError(
            f"{path}: truncated, header declares {expected} bytes but file has {actual}",
            path=str(path),
        )

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with mrcfile.open(path, mode="r", permissive=True) as mrc:
            if mrc.data is None:
                raise IngestError(f"{path}: no data block", path=str(path))
            stack = np.asarray(mrc.data).reshape(nz, ny, nx).astype(np.float64)

    records = []
    for frame in range(nz):
        section = stack[frame]
        if not np.all(np.isfinite(section)):
            raise IngestError(
                f"{path}: non-finite pixels in section {frame}",
                path=str(path),
                index=frame,
            )
        records.append(
            ImageRecord(
                id=_image_id(path, frame, nz),
                width=nx,
                height=ny,
                pixels=section,
                source=ImageSource(path=str(path), frame=frame),
                nbytes=nx * ny * itemsize,
            )
        )
    logger.debug(f"Loaded {nz} section(s) of {nx}x{ny} from {path}")
    return records


def write_mrc(
    path: str | os.PathLike[str],
    images: np.ndarray | Sequence[np.ndarray],
    mode: int = 2,
    big_endian: bool = False,
) -> Path:
    """Write images (M×height×width, or a single 2-D image) as an MRC2014 file."""
    if mode not in SUPPORTED_MODES:
        raise IngestError(f"cannot write MRC mode {mode}", path=str(path))
    stack = np.asarray(images)
    if stack.ndim == 2:
        stack = stack[np.newaxis]
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise IngestError(f"expected a stack of 2-D images, got shape {stack.shape}")

    kind, _ = SUPPORTED_MODES[mode]
    dtype = np.dtype(kind).newbyteorder(">" if big_endian else "<")
    data = stack.astype(dtype)
    path = Path(path)
    with mrcfile.new(path, overwrite=True) as mrc:
        mrc.set_data(data[0] if data.shape[0] == 1 else data)
        if data.shape[0] > 1:
            mrc.set_image_stack()
    return path


def load_raw_manifest(manifest_path: str | os.PathLike[str]) -> list[ImageRecord]:
    """Read headerless little-endian float64 images listed in a sidecar manifest.

    Each line is `id,width,height,path`; relative paths resolve against the
    manifest's directory. A leading header line is allowed.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise IngestError(f"{manifest_path}: no such file", path=str(manifest_path))

    records = []
    with manifest_path.open(newline="") as f:
        for line_no, row in enumerate(csv.reader(f)):
            if not row or row[0].startswith("#"):
                continue
            if line_no == 0 and row[0].strip() == "id":
                continue
            if len(row) != 4:
                raise IngestError(
                    f"{manifest_path}:{line_no + 1}: expected id,width,height,path",
                    path=str(manifest_path),
                    index=line_no,
                )
            image_id, width_s, height_s, rel = (cell.strip() for cell in row)
            try:
                width, height = int(width_s), int(height_s)
            except ValueError as e:
                raise IngestError(
                    f"{manifest_path}:{line_no + 1}: bad dimensions", path=str(manifest_path)
                ) from e
            file_path = (manifest_path.parent / rel).resolve()
            if not file_path.is_file():
                raise IngestError(f"{file_path}: no such file", path=str(file_path))
            expected = width * height * STORE_DTYPE.itemsize
            actual = file_path.stat().st_size
            if actual != expected:
                raise IngestError(
                    f"{file_path}: expected {expected} bytes for {width}x{height}, found {actual}",
                    path=str(file_path),
                )
            pixels = np.fromfile(file_path, dtype=STORE_DTYPE).reshape(height, width)
            if not np.all(np.isfinite(pixels)):
                raise IngestError(
                    f"{file_path}: non-finite pixels in image {image_id!r}",
                    path=str(file_path),
                    index=0,
                )
            records.append(
                ImageRecord(
                    id=image_id,
                    width=width,
                    height=height,
                    pixels=pixels.astype(np.float64),
                    source=ImageSource(path=str(file_path), frame=0),
                    nbytes=expected,
                )
            )
    return records


def image_to_vector(img: ImageRecord) -> np.ndarray:
    """Row-major flattening: vector[r*width + c] == pixels[r, c]."""
    return img.pixels.reshape(img.width * img.height)


def discover_inputs(patterns: Sequence[str]) -> list[Path]:
    """Expand files, directories and glob patterns into a sorted file list.

    Directories contribute their `*.mrc`/`*.mrcs` files and a raw
    `manifest.csv` if present.
    """
    found: list[Path] = []
    for pattern in patterns:
        path = Path(pattern)
        if path.is_dir():
            matches = sorted(
                [*path.glob("*.mrc"), *path.glob("*.mrcs"), *path.glob(RAW_MANIFEST_NAME)]
            )
        elif path.is_file():
            matches = [path]
        else:
            matches = [Path(p) for p in sorted(glob.glob(pattern))]
        if not matches:
            raise IngestError(f"input {pattern!r} matched no files", path=pattern)
        found.extend(matches)

    seen = set()
    unique = []
    for path in found:
        key = path.resolve()
        if key not in seen:
            seen.add(key)
            unique.append(path)
    return unique


def load_file(path: Path) -> list[ImageRecord]:
    if path.suffix.lower() == ".csv":
        return load_raw_manifest(path)
    return load_mrc(path)


def load_inputs(patterns: Sequence[str], workers: int = 1) -> list[ImageRecord]:
    """Load every discovered input file; files load in parallel, order is kept."""
    paths = discover_inputs(patterns)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        per_file = list(executor.map(load_file, paths))
    records = [record for batch in per_file for record in batch]
    logger.info(f"Loaded {len(records)} images from {len(paths)} file(s)")
    return records


class DataStore(BaseModel):
    """An immutable, chunked, on-disk collection of equally sized images."""

    model_config = ConfigDict(frozen=True)

    root: Path
    width: int
    height: int
    manifest: list[ImageMeta]
    chunks: list[ChunkInfo]

    @property
    def vector_length(self) -> int:
        return self.width * self.height

    @property
    def image_count(self) -> int:
        return len(self.manifest)

    @property
    def ids(self) -> list[str]:
        return [meta.id for meta in self.manifest]

    @property
    def total_bytes(self) -> int:
        return sum(meta.nbytes for meta in self.manifest)

    def read_chunk(self, chunk_id: int) -> np.ndarray:
        """Return the N²×c column block of one chunk."""
        info = self.chunks[chunk_id]
        data = np.fromfile(self.root / info.path, dtype=STORE_DTYPE)
        if data.size != info.size * self.vector_length:
            raise IngestError(
                f"chunk {chunk_id}: expected {info.size * self.vector_length} values, "
                f"found {data.size}",
                path=str(self.root / info.path),
                index=chunk_id,
            )
        return data.reshape(info.size, self.vector_length).T.astype(np.float64)

    def iter_vectors(self) -> Iterator[tuple[str, np.ndarray]]:
        for info in self.chunks:
            block = self.read_chunk(info.chunk_id)
            for offset in range(info.size):
                yield self.manifest[info.start + offset].id, block[:, offset]

    def save_manifest(self) -> Path:
        target = self.root / MANIFEST_NAME
        target.write_text(self.model_dump_json(indent=2, exclude={"root"}) + "\n")
        return target

    @classmethod
    def open(cls, root: str | os.PathLike[str]) -> "DataStore":
        root = Path(root)
        manifest = root / MANIFEST_NAME
        if not manifest.is_file():
            raise IngestError(f"{manifest}: not a datastore", path=str(manifest))
        try:
            payload = json.loads(manifest.read_text())
            return cls.model_validate({**payload, "root": root})
        except (ValidationError, json.JSONDecodeError) as e:
            raise IngestError(f"{manifest}: invalid manifest: {e}", path=str(manifest)) from e


def build_datastore(
    records: Sequence[ImageRecord],
    chunk_images: int,
    root: str | os.PathLike[str],
) -> DataStore:
    """Partition records into whole-image chunks and write them under `root`.

    Args:
        records: Images in manifest order; all must share width and height.
        chunk_images: Images per chunk (the last chunk may be smaller).
        root: Directory to create/overwrite the store in.

    Returns:
        The built DataStore with ceil(M / chunk_images) chunks.
    """
    if not records:
        raise IngestError("cannot build a datastore from zero images")
    if chunk_images < 1:
        raise IngestError(f"chunk_images must be >= 1, got {chunk_images}")

    first = records[0]
    seen: set[str] = set()
    for record in records:
        if (record.width, record.height) != (first.width, first.height):
            raise IngestError(
                f"image {record.id!r} is {record.width}x{record.height}, "
                f"expected {first.width}x{first.height}",
                path=record.source.path,
            )
        if record.id in seen:
            raise IngestError(f"duplicate image id {record.id!r}", path=record.source.path)
        seen.add(record.id)

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for stale in root.glob("chunk-*.f64"):
        stale.unlink()

    vector_bytes = first.width * first.height * STORE_DTYPE.itemsize
    chunks = []
    for chunk_id, start in enumerate(range(0, len(records), chunk_images)):
        batch = records[start : start + chunk_images]
        name = f"chunk-{chunk_id:05d}.f64"
        block = np.stack([image_to_vector(r) for r in batch]).astype(STORE_DTYPE)
        block.tofile(root / name)
        chunks.append(
            ChunkInfo(
                chunk_id=chunk_id,
                start=start,
                stop=start + len(batch),
                first_id=batch[0].id,
                last_id=batch[-1].id,
                path=name,
                byte_offset=start * vector_bytes,
                byte_length=len(batch) * vector_bytes,
            )
        )

    store = DataStore(
        root=root,
        width=first.width,
        height=first.height,
        manifest=[r.meta for r in records],
        chunks=chunks,
    )
    store.save_manifest()
    logger.info(
        f"Built datastore at {root}: {store.image_count} images, "
        f"{len(chunks)} chunk(s), vector length {store.vector_length}"
    )
    return store

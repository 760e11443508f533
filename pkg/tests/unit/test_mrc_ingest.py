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
from pathlib import Path

import mrcfile
import numpy as np
import pytest

from cryo_reduce.app_utils.errors import IngestError
from cryo_reduce.stages.mrc_ingest import (
    DataStore,
    build_datastore,
    discover_inputs,
    image_to_vector,
    load_inputs,
    load_mrc,
    load_raw_manifest,
    write_mrc,
)
from cryo_reduce.stages.synth import synth_gen
from tests.helpers import make_records, write_raw_stack


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)


def test_single_image_round_trip(tmp_path: Path, rng: np.random.Generator) -> None:
    """A one-section float32 file yields one record named after the file stem."""
    image = rng.normal(size=(6, 5)).astype(np.float32)
    path = write_mrc(tmp_path / "mic.mrc", image)

    records = load_mrc(path)

    assert len(records) == 1
    record = records[0]
    assert record.id == "mic"
    assert (record.width, record.height) == (5, 6)
    assert record.nbytes == 5 * 6 * 4
    np.testing.assert_array_equal(record.pixels, image.astype(np.float64))


def test_stack_sections_get_frame_ids(tmp_path: Path, rng: np.random.Generator) -> None:
    """Each section of a stack becomes `<stem>-fNNN` and keeps its frame index."""
    stack = rng.normal(size=(3, 4, 4)).astype(np.float32)
    path = write_mrc(tmp_path / "movie.mrcs", stack)

    records = load_mrc(path)

    assert [r.id for r in records] == ["movie-f000", "movie-f001", "movie-f002"]
    assert [r.source.frame for r in records] == [0, 1, 2]
    for record, section in zip(records, stack):
        np.testing.assert_array_equal(record.pixels, section)


@pytest.mark.parametrize("mode, dtype", [(0, np.int8), (1, np.int16), (2, np.float32)])
@pytest.mark.parametrize("big_endian", [False, True])
def test_modes_and_byte_order(
    tmp_path: Path, rng: np.random.Generator, mode: int, dtype: type, big_endian: bool
) -> None:
    """Integer and float modes load identically in either byte order."""
    image = rng.integers(-100, 100, size=(4, 7)).astype(dtype)
    path = write_mrc(tmp_path / "img.mrc", image, mode=mode, big_endian=big_endian)

    (record,) = load_mrc(path)

    np.testing.assert_array_equal(record.pixels, image.astype(np.float64))
    assert record.nbytes == image.size * np.dtype(dtype).itemsize


def test_truncated_file_is_rejected(tmp_path: Path, rng: np.random.Generator) -> None:
    path = write_mrc(tmp_path / "cut.mrc", rng.normal(size=(8, 8)).astype(np.float32))
    data = path.read_bytes()
    path.write_bytes(data[:-16])

    with pytest.raises(IngestError, match="truncated"):
        load_mrc(path)


def test_unsupported_mode_is_rejected(tmp_path: Path) -> None:
    path = tmp_path / "u16.mrc"
    with mrcfile.new(path) as mrc:
        mrc.set_data(np.ones((4, 4), dtype=np.uint16))

    with pytest.raises(IngestError, match="unsupported MRC mode 6"):
        load_mrc(path)


def test_non_finite_section_names_frame(tmp_path: Path) -> None:
    stack = np.zeros((3, 4, 4), dtype=np.float32)
    stack[1, 2, 2] = np.nan
    path = write_mrc(tmp_path / "bad.mrcs", stack)

    with pytest.raises(IngestError) as excinfo:
        load_mrc(path)
    assert excinfo.value.index == 1


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(IngestError, match="no such file"):
        load_mrc(tmp_path / "nope.mrc")


def test_raw_manifest_round_trip(tmp_path: Path, rng: np.random.Generator) -> None:
    pixels = rng.normal(size=(3, 4, 5))
    manifest = write_raw_stack(tmp_path / "raw", pixels)

    records = load_raw_manifest(manifest)

    assert [r.id for r in records] == ["img_000", "img_001", "img_002"]
    for record, image in zip(records, pixels):
        np.testing.assert_array_equal(record.pixels, image)
        assert record.nbytes == image.size * 8


def test_raw_manifest_size_mismatch(tmp_path: Path) -> None:
    manifest = write_raw_stack(tmp_path / "raw", np.zeros((1, 4, 4)))
    (tmp_path / "raw" / "img_000.f64").write_bytes(b"\0" * 10)

    with pytest.raises(IngestError, match="expected 128 bytes"):
        load_raw_manifest(manifest)


def test_image_to_vector_is_row_major(rng: np.random.Generator) -> None:
    (record,) = make_records(rng.normal(size=(1, 3, 4)))
    vector = image_to_vector(record)
    assert vector.shape == (12,)
    assert vector[1 * 4 + 2] == record.pixels[1, 2]


def test_discover_inputs_sorts_and_dedupes(tmp_path: Path) -> None:
    for name in ["b.mrc", "a.mrc"]:
        write_mrc(tmp_path / name, np.zeros((4, 4), dtype=np.float32))
    (tmp_path / "notes.txt").write_text("ignored")

    paths = discover_inputs([str(tmp_path), str(tmp_path / "a.mrc")])

    assert [p.name for p in paths] == ["a.mrc", "b.mrc"]


def test_discover_inputs_no_match(tmp_path: Path) -> None:
    with pytest.raises(IngestError, match="matched no files"):
        discover_inputs([str(tmp_path / "*.mrc")])


def test_load_inputs_keeps_file_order(tmp_path: Path) -> None:
    for i in range(5):
        write_mrc(tmp_path / f"m{i}.mrc", np.full((4, 4), i, dtype=np.float32))

    records = load_inputs([str(tmp_path)], workers=4)

    assert [r.id for r in records] == [f"m{i}" for i in range(5)]
    assert [r.pixels[0, 0] for r in records] == [0, 1, 2, 3, 4]


def test_build_datastore_chunks(tmp_path: Path, rng: np.random.Generator) -> None:
    """7 images in chunks of 3 -> chunks of 3, 3, 1 whole images."""
    pixels = rng.normal(size=(7, 3, 2))
    store = build_datastore(make_records(pixels), 3, tmp_path / "store")

    assert [c.size for c in store.chunks] == [3, 3, 1]
    assert store.chunks[1].byte_offset == 3 * 6 * 8
    assert store.chunks[2].byte_length == 6 * 8
    block = store.read_chunk(1)
    assert block.shape == (6, 3)
    np.testing.assert_array_equal(block[:, 0], pixels[3].reshape(-1))

    ids = [image_id for image_id, _ in store.iter_vectors()]
    assert ids == store.ids


def test_chunks_concatenate_back_to_the_stack(tmp_path: Path) -> None:
    """100 synthetic 8x8 images in chunks of 7: 15 chunks covering every image."""
    records = synth_gen(4, 90, 10, 8, 8).records
    store = build_datastore(records, 7, tmp_path / "store")

    assert len(store.chunks) == 15
    matrix = np.concatenate(
        [store.read_chunk(info.chunk_id) for info in store.chunks], axis=1
    )
    expected = np.stack([image_to_vector(r) for r in records], axis=1)
    np.testing.assert_array_equal(matrix, expected)
    chunk_ids = [
        image_id
        for info in store.chunks
        for image_id in store.ids[info.start : info.stop]
    ]
    assert chunk_ids == [r.id for r in records]


def test_datastore_reopens(tmp_path: Path, rng: np.random.Generator) -> None:
    store = build_datastore(make_records(rng.normal(size=(4, 2, 2))), 2, tmp_path / "s")

    reopened = DataStore.open(tmp_path / "s")

    assert reopened.manifest == store.manifest
    assert reopened.chunks == store.chunks
    np.testing.assert_array_equal(reopened.read_chunk(0), store.read_chunk(0))


def test_build_datastore_rejects_mixed_sizes(tmp_path: Path) -> None:
    records = make_records(np.zeros((2, 4, 4))) + make_records(
        np.zeros((1, 4, 5)), prefix="wide"
    )
    with pytest.raises(IngestError, match="wide_000"):
        build_datastore(records, 2, tmp_path / "s")


def test_build_datastore_rejects_duplicate_ids(tmp_path: Path) -> None:
    records = make_records(np.zeros((2, 4, 4))) * 2
    with pytest.raises(IngestError, match="duplicate"):
        build_datastore(records, 2, tmp_path / "s")


def test_build_datastore_rejects_empty(tmp_path: Path) -> None:
    with pytest.raises(IngestError):
        build_datastore([], 2, tmp_path / "s")

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
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from cryo_reduce.stages.mrc_ingest import DataStore, build_datastore
from tests.helpers import make_records


@pytest.fixture
def store_factory(tmp_path: Path) -> Callable[..., DataStore]:
    """Build a DataStore from an M×h×w array in a fresh temp directory."""
    counter = iter(range(10_000))

    def build(pixels: np.ndarray, chunk_images: int = 4, nbytes: int = -1) -> DataStore:
        records = make_records(np.asarray(pixels, dtype=np.float64), nbytes=nbytes)
        return build_datastore(records, chunk_images, tmp_path / f"store{next(counter)}")

    return build

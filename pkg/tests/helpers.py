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

import numpy as np

from cryo_reduce.app_utils.typing import ImageRecord, ImageSource


def make_records(
    pixels: np.ndarray, prefix: str = "img", nbytes: int = -1
) -> list[ImageRecord]:
    """One record per M×height×width slice."""
    return [
        ImageRecord(
            id=f"{prefix}_{i:03d}",
            width=image.shape[1],
            height=image.shape[0],
            pixels=image,
            source=ImageSource(path=f"memory://{prefix}", frame=i),
            nbytes=nbytes,
        )
        for i, image in enumerate(pixels)
    ]


def write_raw_stack(directory: Path, pixels: np.ndarray, prefix: str = "img") -> Path:
    """Write images as raw float64 files plus manifest.csv; return the manifest."""
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["id,width,height,path"]
    for i, image in enumerate(pixels):
        name = f"{prefix}_{i:03d}.f64"
        image.astype("<f8").tofile(directory / name)
        lines.append(f"{prefix}_{i:03d},{image.shape[1]},{image.shape[0]},{name}")
    manifest = directory / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest



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

import pytest
from pydantic import ValidationError

from cryo_reduce.app_utils.config import (
    GIB,
    Settings,
    load_env_file,
    load_settings,
    parse_key_value_pairs,
)
from cryo_reduce.app_utils.typing import PipelineConfig


def test_parse_key_value_pairs() -> None:
    assert parse_key_value_pairs("workers=4, executor = process,broken") == {
        "workers": "4",
        "executor": "process",
    }
    assert parse_key_value_pairs(None) == {}


def test_defaults(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    settings = Settings()
    assert settings.memory_budget_bytes == 2 * GIB
    assert settings.executor == "thread"
    assert settings.workers >= 1


def test_environment_variables(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CRYO_REDUCE_WORKERS", "3")
    assert Settings().workers == 3


def test_env_file_then_overrides(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    env = tmp_path / "custom.env"
    env.write_text("CRYO_REDUCE_WORKERS=2\nCRYO_REDUCE_UPLOAD_RETRIES=5\nOTHER=1\n")

    settings = load_settings(str(env), {"workers": "6"})

    assert settings.workers == 6
    assert settings.upload_retries == 5


def test_missing_env_file_is_empty(tmp_path: Path) -> None:
    assert load_env_file(str(tmp_path / "absent.env")) == {}


def test_invalid_setting(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.chdir(tmp_path)
    with pytest.raises(ValidationError):
        load_settings(None, {"executor": "gpu"})


@pytest.mark.parametrize(
    "overrides",
    [
        {"chunk_images": 0},
        {"threshold": 0.0},
        {"threshold": float("nan")},
        {"explained": 1.5},
        {"components": 0},
        {"store": "s3:bucket"},
        {"inputs": []},
    ],
)
def test_pipeline_config_validation(tmp_path: Path, overrides: dict[str, object]) -> None:
    base: dict[str, object] = {"inputs": ["in"], "output_dir": tmp_path}
    with pytest.raises(ValidationError):
        PipelineConfig(**{**base, **overrides})  # type: ignore[arg-type]

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
"""Runtime settings for cryo-reduce.

Values come from (lowest to highest precedence) field defaults, a `.env` file,
`CRYO_REDUCE_*` environment variables and finally CLI flags.
"""

import logging
import os
from typing import Literal

from dotenv import dotenv_values
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

GIB = 1024**3


def _default_workers() -> int:
    return os.cpu_count() or 1


class Settings(BaseSettings):
    """Environment-driven settings."""

    model_config = SettingsConfigDict(
        env_prefix="CRYO_REDUCE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    memory_budget_bytes: int = Field(default=2 * GIB, ge=1)
    workers: int = Field(default_factory=_default_workers, ge=1)
    executor: Literal["thread", "process"] = "thread"
    log_level: str = "INFO"
    cloud_logging: bool = False
    upload_retries: int = Field(default=3, ge=1)


def parse_key_value_pairs(kv_string: str | None) -> dict[str, str]:
    """Parse key-value pairs from a comma-separated KEY=VALUE string."""
    result = {}
    if kv_string:
        for pair in kv_string.split(","):
            if "=" in pair:
                key, value = pair.split("=", 1)
                result[key.strip()] = value.strip()
            else:
                logging.warning(f"Skipping malformed key-value pair: {pair}")
    return result


def load_env_file(env_file_path: str | None) -> dict[str, str]:
    """Load variables from a .env file and return them as a dictionary."""
    target_file = env_file_path or ".env"

    if not os.path.exists(target_file):
        if env_file_path:  # Only warn if a specific file was explicitly provided
            logging.warning(f"Specified env file not found: {target_file}")
        return {}

    logging.info(f"Loading environment variables from {target_file}")
    return {
        key: value
        for key, value in dotenv_values(target_file).items()
        if value is not None
    }


def load_settings(
    env_file: str | None = None, overrides: dict[str, str] | None = None
) -> Settings:
    """Build Settings from an optional .env file plus explicit overrides.

    Override keys may be given with or without the `CRYO_REDUCE_` prefix and in
    any case, e.g. `workers=4` or `CRYO_REDUCE_WORKERS=4`.
    """
    values: dict[str, str] = {}
    for key, value in {**load_env_file(env_file), **(overrides or {})}.items():
        name = key.lower()
        if name.startswith("cryo_reduce_"):
            name = name[len("cryo_reduce_") :]
        if name in Settings.model_fields:
            values[name] = value
        else:
            logging.info(f"Ignoring unknown setting {key}")
    return Settings(**values)  # type: ignore[arg-type]

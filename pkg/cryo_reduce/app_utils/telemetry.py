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

"""Logging setup and structured stage events (stdlib or Google Cloud Logging)."""

import json
import logging
from typing import Any

from google.cloud import logging as google_cloud_logging


def setup_logging(level: str = "INFO", cloud: bool = False) -> None:
    """Configure root logging for CLI runs.

    With `cloud`, records are also shipped to Cloud Logging through the
    client's standard handler.
    """
    log_level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logging.getLogger("google").setLevel(logging.WARNING)
    logging.getLogger("urllib3").setLevel(logging.WARNING)
    if cloud:
        google_cloud_logging.Client().setup_logging(log_level=log_level)
        logging.info("Logging routed to Cloud Logging")


class EventLogger:
    """Structured stage events, sent to Cloud Logging or the stdlib logger."""

    def __init__(self, name: str = "cryo_reduce", cloud: bool = False) -> None:
        self.name = name
        self._cloud_logger: Any = None
        self._logger = logging.getLogger(name)
        if cloud:
            logging_client = google_cloud_logging.Client()
            self._cloud_logger = logging_client.logger(name)
            self._logger.info("Structured events routed to Cloud Logging")

    def log_struct(self, payload: dict[str, Any], severity: str = "INFO") -> None:
        if self._cloud_logger is not None:
            self._cloud_logger.log_struct(payload, severity=severity)
            return
        level = getattr(logging, severity.upper(), logging.INFO)
        self._logger.log(level, json.dumps(payload, sort_keys=True, default=str))

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
"""Object-store clients for KEEP images and reports.

Only a local-directory backend ships. A cloud backend implements the same
`ObjectStoreClient` protocol and is selected by its `<backend>:<location>`
descriptor in `open_store`.
"""

import logging
import os
from pathlib import Path, PurePosixPath
from typing import Protocol, runtime_checkable

from tenacity import (
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from cryo_reduce.app_utils.errors import ObjectStoreError

logger = logging.getLogger(__name__)


@runtime_checkable
class ObjectStoreClient(Protocol):
    """Minimal put/get/list interface over flat string keys."""

    @property
    def descriptor(self) -> str: ...

    def put(self, key: str, data: bytes) -> None: ...

    def get(self, key: str) -> bytes: ...

    def list(self, prefix: str = "") -> list[str]: ...


def _check_key(key: str) -> PurePosixPath:
    path = PurePosixPath(key)
    if not key or path.is_absolute() or ".." in path.parts:
        raise ObjectStoreError(f"invalid object key {key!r}", key=key)
    return path


class LocalObjectStore:
    """Objects stored as files under a root directory, keys map to paths."""

    def __init__(self, root: str | os.PathLike[str], retries: int = 3) -> None:
        self.root = Path(root)
        self.retries = retries

    @property
    def descriptor(self) -> str:
        return f"local:{self.root}"

    def _retrying(self) -> Retrying:
        return Retrying(
            stop=stop_after_attempt(self.retries),
            wait=wait_exponential(multiplier=0.01, max=0.5),
            retry=retry_if_exception_type(OSError),
            reraise=False,
        )

    def _write(self, target: Path, data: bytes) -> None:
        target.parent.mkdir(parents=True, exist_ok=True)
        partial = target.with_name(target.name + ".part")
        partial.write_bytes(data)
        os.replace(partial, target)

    def put(self, key: str, data: bytes) -> None:
        target = self.root / _check_key(key)
        try:
            for attempt in self._retrying():
                with attempt:
                    self._write(target, data)
        except RetryError as e:
            cause = e.last_attempt.exception()
            raise ObjectStoreError(
                f"put {key!r} failed after {self.retries} attempt(s): {cause}", key=key
            ) from cause
        logger.debug(f"Stored {key} ({len(data)} bytes)")

    def get(self, key: str) -> bytes:
        target = self.root / _check_key(key)
        try:
            return target.read_bytes()
        except OSError as e:
            raise ObjectStoreError(f"get {key!r} failed: {e}", key=key) from e

    def list(self, prefix: str = "") -> list[str]:
        if not self.root.is_dir():
            return []
        keys = (
            path.relative_to(self.root).as_posix()
            for path in self.root.rglob("*")
            if path.is_file() and not path.name.endswith(".part")
        )
        return sorted(key for key in keys if key.startswith(prefix))


def open_store(descriptor: str, retries: int = 3) -> ObjectStoreClient:
    """Build a client from `local:<dir>`."""
    backend, _, location = descriptor.partition(":")
    if backend == "local" and location:
        return LocalObjectStore(location, retries=retries)
    raise ObjectStoreError(f"unsupported object store {descriptor!r}")

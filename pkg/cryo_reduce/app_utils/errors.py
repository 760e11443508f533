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
"""Exception hierarchy shared by every stage of the pipeline."""


class CryoReduceError(Exception):
    """Base class for all cryo-reduce errors."""


class IngestError(CryoReduceError, ValueError):
    """An input file or record set could not be ingested."""

    def __init__(self, message: str, *, path: str | None = None, index: int | None = None):
        self.path = path
        self.index = index
        super().__init__(message)


class MapReduceError(CryoReduceError, RuntimeError):
    """A map task failed; the job was aborted."""

    def __init__(self, chunk_id: object, cause: BaseException):
        self.chunk_id = chunk_id
        self.cause = cause
        super().__init__(f"map task failed on chunk {chunk_id!r}: {cause}")


class BudgetExceededError(CryoReduceError, ValueError):
    """A dense matrix would not fit in the configured memory budget."""

    def __init__(self, required: int, budget: int, feasible_mode: str | None):
        self.required = required
        self.budget = budget
        self.feasible_mode = feasible_mode
        hint = (
            f"; use mode={feasible_mode!r} instead"
            if feasible_mode
            else "; no covariance mode fits, raise the memory budget"
        )
        super().__init__(
            f"{required} bytes required but memory budget is {budget} bytes{hint}"
        )


class ZeroVarianceError(CryoReduceError, ValueError):
    """A covariance diagonal entry is zero, so correlation is undefined."""

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(
            f"zero variance at index {index} (diagonal={value!r}); "
            "the image is constant after centering"
        )


class ConvergenceError(CryoReduceError, RuntimeError):
    """Jacobi sweeps did not converge within the iteration cap."""

    def __init__(self, sweeps: int, residual: float):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(
            f"Jacobi did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {residual:.3e})"
        )


class InsufficientPopulationError(CryoReduceError, ValueError):
    """Too few images for robust statistics."""

    def __init__(self, size: int, minimum: int = 3):
        self.size = size
        super().__init__(f"need at least {minimum} images, got {size}")


class CostModelError(CryoReduceError, ValueError):
    """Invalid cost-model input."""


class ObjectStoreError(CryoReduceError, RuntimeError):
    """An object-store operation failed."""

    def __init__(self, message: str, *, key: str | None = None):
        self.key = key
        super().__init__(message)


class StageError(CryoReduceError, RuntimeError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")

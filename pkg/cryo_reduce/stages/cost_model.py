"""Cloud cost model: price storage + processing under purchasing schemes.

All money is Decimal, rounded to cents half-up per component; totals are the
exact sum of the rounded components. Prices always come from a pricing file.
"""

import json
import logging
from collections.abc import Sequence
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, ValidationError

from cryo_reduce.app_utils.errors import CostModelError
from cryo_reduce.app_utils.typing import (
    CostBreakdown,
    CostEstimate,
    PricingScheme,
    RankedEstimate,
    SchemeName,
    Workload,
)

logger = logging.getLogger(__name__)

CENT = Decimal("0.01")
PCT_PLACES = Decimal("0.0001")
HOURS_PLACES = Decimal("0.0001")

Number = Decimal | int | float | str


class SpotAction(str, Enum):
    START = "start"
    TERMINATE = "terminate"


class SpotReplay(BaseModel):
    """The bid rule replayed over an hourly spot-price trace."""

    model_config = ConfigDict(frozen=True)

    bid: Decimal
    decisions: list[SpotAction]
    billable_hours: int
    compute_dollars: Decimal


def to_decimal(value: Number, field: str) -> Decimal:
    try:
        result = value if isinstance(value, Decimal) else Decimal(str(value))
    except InvalidOperation as e:
        raise CostModelError(f"{field}: not a number: {value!r}") from e
    if not result.is_finite():
        raise CostModelError(f"{field}: must be finite, got {value!r}")
    if result < 0:
        raise CostModelError(f"{field}: must be >= 0, got {value!r}")
    return result


def cents(value: Decimal) -> Decimal:
    return value.quantize(CENT, rounding=ROUND_HALF_UP)


def estimate(
    scheme: PricingScheme,
    data_gb: Number,
    compute_hours: Number,
    instance_count: int,
    storage_months: Number,
) -> CostEstimate:
    """Dollars to store `data_gb` for `storage_months` and run the compute.

    compute = rate·hours·instances, storage = storage_rate·GB·months, plus the
    scheme's upfront fee. Instance boot time is not billed.
    """
    gb = to_decimal(data_gb, "data_gb")
    hours = to_decimal(compute_hours, "compute_hours")
    months = to_decimal(storage_months, "storage_months")
    if isinstance(instance_count, bool) or int(instance_count) != instance_count:
        raise CostModelError(f"instance_count: must be an integer, got {instance_count!r}")
    if instance_count < 0:
        raise CostModelError(f"instance_count: must be >= 0, got {instance_count}")

    compute = cents(scheme.compute_rate * hours * instance_count)
    storage = cents(scheme.storage_rate * gb * months)
    upfront = cents(scheme.upfront)
    return CostEstimate(
        scheme=scheme.name,
        data_gb=gb,
        compute_hours=hours,
        instance_count=int(instance_count),
        storage_months=months,
        total_dollars=compute + storage + upfront,
        breakdown=CostBreakdown(compute=compute, storage=storage, upfront=upfront),
    )


def estimate_workload(scheme: PricingScheme, workload: Workload) -> CostEstimate:
    return estimate(
        scheme,
        workload.data_gb,
        workload.compute_hours,
        workload.instance_count,
        workload.storage_months,
    )


def compare(
    schemes: Sequence[PricingScheme],
    workload: Workload,
    baseline: SchemeName | str | None = None,
) -> list[RankedEstimate]:
    """Price the workload under each scheme, cheapest first.

    savings_pct = (reference − total)/reference·100, where reference is the
    most expensive total, or the named baseline scheme's total.
    """
    if not schemes:
        raise CostModelError("no pricing schemes to compare")
    if len(schemes) < 2:
        raise CostModelError("compare needs at least two pricing schemes")

    estimates = [estimate_workload(scheme, workload) for scheme in schemes]
    if baseline is None:
        reference = max(e.total_dollars for e in estimates)
    else:
        try:
            name = SchemeName(baseline)
        except ValueError as e:
            raise CostModelError(f"unknown baseline scheme {baseline!r}") from e
        matches = [e for e in estimates if e.scheme is name]
        if not matches:
            raise CostModelError(f"baseline scheme {name.value!r} is not being compared")
        reference = matches[0].total_dollars

    ranked = []
    for est in sorted(estimates, key=lambda e: e.total_dollars):
        if reference == 0:
            savings = Decimal(0)
        else:
            savings = ((reference - est.total_dollars) / reference * 100).quantize(
                PCT_PLACES, rounding=ROUND_HALF_UP
            )
        ranked.append(RankedEstimate(estimate=est, savings_pct=savings))
    return ranked


def spot_decision(bid: Number, current_price: Number) -> SpotAction:
    """Start the instance only while the spot price is strictly below the bid."""
    if to_decimal(current_price, "current_price") < to_decimal(bid, "bid"):
        return SpotAction.START
    return SpotAction.TERMINATE


def spot_schedule(bid: Number, prices: Sequence[Number]) -> SpotReplay:
    """Apply the bid rule to each hourly price of a recorded trace.

    Started hours are billed at that hour's market price.
    """
    bid_d = to_decimal(bid, "bid")
    decisions = []
    billed = Decimal(0)
    for hour, price in enumerate(prices):
        price_d = to_decimal(price, f"prices[{hour}]")
        action = spot_decision(bid_d, price_d)
        decisions.append(action)
        if action is SpotAction.START:
            billed += price_d
    return SpotReplay(
        bid=bid_d,
        decisions=decisions,
        billable_hours=sum(d is SpotAction.START for d in decisions),
        compute_dollars=cents(billed),
    )


def reduction_savings(
    before_gb: Number, after_gb: Number, storage_rate: Number, months: Number
) -> Decimal:
    """Storage dollars saved by shrinking the dataset from before_gb to after_gb."""
    before = to_decimal(before_gb, "before_gb")
    after = to_decimal(after_gb, "after_gb")
    if after > before:
        raise CostModelError(f"after_gb ({after}) exceeds before_gb ({before})")
    rate = to_decimal(storage_rate, "storage_rate")
    duration = to_decimal(months, "months")
    return cents((before - after) * rate * duration)


def cost_curve(
    scheme: PricingScheme,
    sizes_gb: Sequence[Number],
    gb_per_instance_hour: Number,
    instance_count: int,
    storage_months: Number = 1,
) -> list[CostEstimate]:
    """Cost against data size, compute hours scaled from a reference throughput."""
    throughput = to_decimal(gb_per_instance_hour, "gb_per_instance_hour")
    if throughput == 0 or instance_count < 1:
        raise CostModelError("throughput and instance_count must be positive")
    curve = []
    for size in sizes_gb:
        gb = to_decimal(size, "sizes_gb")
        hours = (gb / (throughput * instance_count)).quantize(
            HOURS_PLACES, rounding=ROUND_HALF_UP
        )
        curve.append(estimate(scheme, gb, hours, instance_count, storage_months))
    return curve


def load_pricing(path: str | Path) -> list[PricingScheme]:
    """Read a pricing file: a JSON list (or {"schemes": [...]}) of schemes."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(), parse_float=Decimal)
    except (OSError, json.JSONDecodeError) as e:
        raise CostModelError(f"{path}: cannot read pricing config: {e}") from e
    if isinstance(payload, dict):
        payload = payload.get("schemes", [])
    if not isinstance(payload, list) or not payload:
        raise CostModelError(f"{path}: expected a non-empty list of schemes")
    try:
        schemes = [PricingScheme.model_validate(item) for item in payload]
    except ValidationError as e:
        raise CostModelError(f"{path}: invalid scheme: {e}") from e
    names = [s.name for s in schemes]
    if len(set(names)) != len(names):
        raise CostModelError(f"{path}: duplicate scheme names")
    logger.info(f"Loaded {len(schemes)} pricing scheme(s) from {path}")
    return schemes

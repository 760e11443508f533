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
import json
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

from cryo_reduce.app_utils.errors import CostModelError
from cryo_reduce.app_utils.typing import PricingScheme, SchemeName, Workload
from cryo_reduce.stages.cost_model import (
    SpotAction,
    compare,
    cost_curve,
    estimate,
    estimate_workload,
    load_pricing,
    reduction_savings,
    spot_decision,
    spot_schedule,
)

SAMPLE_PRICING = Path(__file__).resolve().parents[2] / "pricing.sample.json"

TWO_TB = Workload(
    data_gb=Decimal(2000),
    compute_hours=Decimal("60.8"),
    instance_count=200,
    storage_months=Decimal(1),
)


@pytest.fixture
def schemes() -> list[PricingScheme]:
    return load_pricing(SAMPLE_PRICING)


def by_name(schemes: list[PricingScheme], name: str) -> PricingScheme:
    return next(s for s in schemes if s.name is SchemeName(name))


def test_sample_pricing_spot_vs_on_demand(schemes: list[PricingScheme]) -> None:
    """Spot saves about 27% over on-demand for the 2 TB, 200-instance workload."""
    ranked = compare(schemes, TWO_TB, baseline="on_demand")

    spot = next(r for r in ranked if r.estimate.scheme is SchemeName.SPOT)
    assert abs(spot.savings_pct - Decimal(27)) <= Decimal("0.5")
    on_demand = next(r for r in ranked if r.estimate.scheme is SchemeName.ON_DEMAND)
    assert on_demand.savings_pct == 0
    assert on_demand.estimate.total_dollars == Decimal("16265.79")
    assert spot.estimate.total_dollars == Decimal("11873.60")


def test_sample_pricing_default_baseline_is_on_demand(
    schemes: list[PricingScheme],
) -> None:
    """Without a baseline, savings are against on-demand, the most expensive scheme."""
    ranked = compare(schemes, TWO_TB)

    names = [r.estimate.scheme for r in ranked]
    assert names == [
        SchemeName.SPOT,
        SchemeName.RESERVED,
        SchemeName.DEDICATED,
        SchemeName.ON_DEMAND,
    ]
    assert abs(ranked[0].savings_pct - Decimal(27)) <= Decimal("0.5")
    assert ranked[0].savings_pct == next(
        r.savings_pct
        for r in compare(schemes, TWO_TB, baseline="on_demand")
        if r.estimate.scheme is SchemeName.SPOT
    )
    dedicated = by_name(schemes, "dedicated")
    assert estimate_workload(dedicated, TWO_TB).total_dollars == Decimal("15576.00")


def test_compare_sorts_cheapest_first(schemes: list[PricingScheme]) -> None:
    ranked = compare(schemes, TWO_TB)

    totals = [r.estimate.total_dollars for r in ranked]
    assert totals == sorted(totals)
    assert ranked[-1].savings_pct == 0


def test_compare_needs_two_schemes(schemes: list[PricingScheme]) -> None:
    with pytest.raises(CostModelError):
        compare(schemes[:1], TWO_TB)
    with pytest.raises(CostModelError, match="baseline"):
        compare(schemes, TWO_TB, baseline="bogus")


def test_reduction_savings_is_exact() -> None:
    assert reduction_savings(2000, 1500, "0.10", 1) == Decimal("50.00")
    with pytest.raises(CostModelError):
        reduction_savings(1500, 2000, "0.10", 1)


def test_estimate_is_linear_in_data_size(schemes: list[PricingScheme]) -> None:
    on_demand = by_name(schemes, "on_demand")
    totals = [
        estimate(on_demand, gb, 10, 4, 1).total_dollars for gb in (100, 200, 300, 400)
    ]
    steps = {b - a for a, b in zip(totals, totals[1:])}
    assert steps == {Decimal("10.00")}


def test_breakdown_sums_to_total(schemes: list[PricingScheme]) -> None:
    reserved = by_name(schemes, "reserved")
    est = estimate(reserved, "333.3", "12.345", 3, 2)
    b = est.breakdown
    assert est.total_dollars == b.compute + b.storage + b.upfront
    assert b.upfront == Decimal("1500.00")
    for value in (b.compute, b.storage, b.upfront):
        assert value == value.quantize(Decimal("0.01"))


@pytest.mark.parametrize(
    "field, kwargs",
    [
        ("data_gb", {"data_gb": -1}),
        ("compute_hours", {"compute_hours": "nan"}),
        ("instance_count", {"instance_count": -2}),
    ],
)
def test_estimate_rejects_bad_inputs(
    schemes: list[PricingScheme], field: str, kwargs: dict[str, object]
) -> None:
    args: dict[str, object] = {
        "data_gb": 1,
        "compute_hours": 1,
        "instance_count": 1,
        "storage_months": 1,
        **kwargs,
    }
    with pytest.raises(CostModelError, match=field):
        estimate(schemes[0], **args)  # type: ignore[arg-type]


def test_spot_rule_property() -> None:
    """Start exactly when price < bid; equal prices terminate."""
    rng = np.random.default_rng(0)
    bids = rng.integers(0, 300, size=10_000)
    prices = rng.integers(0, 300, size=10_000)
    for bid, price in zip(bids, prices):
        b, p = Decimal(int(bid)) / 100, Decimal(int(price)) / 100
        expected = SpotAction.START if p < b else SpotAction.TERMINATE
        assert spot_decision(b, p) is expected
    assert spot_decision("0.50", "0.50") is SpotAction.TERMINATE


def test_spot_schedule_replays_trace() -> None:
    replay = spot_schedule("0.40", ["0.30", "0.40", "0.10", "0.55"])

    assert replay.decisions == [
        SpotAction.START,
        SpotAction.TERMINATE,
        SpotAction.START,
        SpotAction.TERMINATE,
    ]
    assert replay.billable_hours == 2
    assert replay.compute_dollars == Decimal("0.40")


def test_cost_curve_scales_hours(schemes: list[PricingScheme]) -> None:
    spot = by_name(schemes, "spot")

    curve = cost_curve(spot, [100, 200, 400], gb_per_instance_hour=10, instance_count=5)

    assert [e.compute_hours for e in curve] == [Decimal(2), Decimal(4), Decimal(8)]
    assert curve[2].total_dollars == 2 * curve[1].total_dollars


def test_load_pricing_rejects_duplicates(tmp_path: Path) -> None:
    entry = {"name": "spot", "compute_rate": "0.5", "storage_rate": "0.1"}
    path = tmp_path / "p.json"
    path.write_text(json.dumps([entry, entry]))
    with pytest.raises(CostModelError, match="duplicate"):
        load_pricing(path)


def test_spot_scheme_cannot_have_upfront(tmp_path: Path) -> None:
    path = tmp_path / "p.json"
    path.write_text(
        json.dumps(
            {
                "schemes": [
                    {
                        "name": "spot",
                        "compute_rate": "0.5",
                        "upfront": "10",
                        "storage_rate": "0.1",
                    }
                ]
            }
        )
    )
    with pytest.raises(CostModelError, match="invalid scheme"):
        load_pricing(path)

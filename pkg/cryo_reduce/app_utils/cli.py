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
"""`cryo-reduce` command line.

Exit codes: 0 success, 1 usage/configuration error, 2 pipeline failure.
"""

import json
import logging
import sys
from decimal import Decimal
from pathlib import Path
from typing import Any

import click
from pydantic import ValidationError

from cryo_reduce import pipeline
from cryo_reduce.app_utils import artifacts
from cryo_reduce.app_utils.config import Settings, load_settings, parse_key_value_pairs
from cryo_reduce.app_utils.errors import CryoReduceError, StageError
from cryo_reduce.app_utils.telemetry import EventLogger, setup_logging
from cryo_reduce.app_utils.typing import PipelineConfig, Workload
from cryo_reduce.stages.cost_model import compare, load_pricing, reduction_savings
from cryo_reduce.stages.mrc_ingest import DataStore
from cryo_reduce.stages.pca_engine import load_pca
from cryo_reduce.stages.synth import synth_gen
from cryo_reduce.stages.triage import classify

logger = logging.getLogger(__name__)

REDUCE_SIDECAR = "reduce.json"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class AppContext:
    def __init__(self, settings: Settings) -> None:
        self.settings = settings
        self.events = EventLogger(cloud=settings.cloud_logging)

    def timer(self) -> pipeline.StageTimer:
        return pipeline.StageTimer(self.events)


pass_app = click.make_pass_decorator(AppContext)


def _workers(app: AppContext, workers: int | None) -> int:
    return workers if workers is not None else app.settings.workers


def _out_option(help_text: str) -> Any:
    return click.option(
        "--out",
        "out",
        required=True,
        type=click.Path(file_okay=False, path_type=Path),
        help=help_text,
    )


workers_option = click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=None,
    help="Map-reduce worker count (defaults to CRYO_REDUCE_WORKERS or the CPU count)",
)


@click.group()
@click.option(
    "--env-file",
    default=None,
    help="Path to a .env file with CRYO_REDUCE_* settings",
)
@click.option(
    "--set",
    "set_values",
    default=None,
    help="Comma-separated KEY=VALUE setting overrides (e.g. workers=4,executor=process)",
)
@click.option("--log-level", default=None, help="Logging level (overrides settings)")
@click.pass_context
def cli(
    ctx: click.Context,
    env_file: str | None,
    set_values: str | None,
    log_level: str | None,
) -> None:
    """Reduce cryo-EM image stacks with PCA and estimate cloud costs."""
    overrides = parse_key_value_pairs(set_values)
    if log_level:
        overrides["log_level"] = log_level
    settings = load_settings(env_file, overrides)
    setup_logging(settings.log_level, cloud=settings.cloud_logging)
    ctx.obj = AppContext(settings)


@cli.command()
@click.option(
    "--input",
    "inputs",
    multiple=True,
    required=True,
    help="MRC file, raw manifest.csv, directory or glob. Can be given multiple times",
)
@click.option("--chunk-size", type=click.IntRange(min=1), default=16, help="Images per chunk")
@workers_option
@_out_option("Output directory; the datastore is written to <out>/datastore")
@pass_app
def ingest(
    app: AppContext, inputs: tuple[str, ...], chunk_size: int, workers: int | None, out: Path
) -> None:
    """Load images into a chunked datastore."""
    timer = app.timer()
    with timer.stage("ingest"):
        store = pipeline.ingest_stage(list(inputs), out, chunk_size, _workers(app, workers))
    click.echo(
        f"✅ {store.image_count} images ({store.width}x{store.height}) in "
        f"{len(store.chunks)} chunk(s) at {store.root}"
    )


@cli.command()
@_out_option("Directory holding <out>/datastore; reduction outputs go here")
@click.option("--mode", type=click.Choice(["gram", "pixel"]), default="gram", show_default=True)
@click.option("--no-center", is_flag=True, help="Skip mean subtraction")
@click.option("--components", type=click.IntRange(min=1), default=None, help="Fixed k")
@click.option(
    "--explained",
    type=click.FloatRange(min=0, max=1, min_open=True),
    default=0.9,
    show_default=True,
    help="Cumulative explained-variance target used when --components is not given",
)
@workers_option
@pass_app
def reduce(
    app: AppContext,
    out: Path,
    mode: str,
    no_center: bool,
    components: int | None,
    explained: float,
    workers: int | None,
) -> None:
    """Covariance, correlation, SVD and eigenspace scores for a datastore."""
    timer = app.timer()
    with timer.stage("ingest"):
        store = DataStore.open(out / pipeline.DATASTORE_DIR)
    outcome = pipeline.reduce_stage(
        store,
        mode=mode,  # type: ignore[arg-type]
        centered=not no_center,
        components=components,
        explained=explained,
        workers=_workers(app, workers),
        executor=app.settings.executor,
        memory_budget_bytes=app.settings.memory_budget_bytes,
        timer=timer,
    )
    pipeline.save_reduction(outcome, store, out)
    artifacts.write_text(
        out / REDUCE_SIDECAR,
        json.dumps({"mode": mode, "centered": not no_center, "k": outcome.k}, indent=2)
        + "\n",
    )
    click.echo(
        f"✅ k={outcome.k} of {outcome.pca.dim} components "
        f"({float(outcome.pca.explained[: outcome.k].sum()):.1%} explained)"
    )


@cli.command()
@_out_option("Directory written by `reduce`")
@click.option("--threshold", type=float, default=3.5, show_default=True)
@click.option(
    "--pricing",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Pricing JSON; adds a pricing echo and storage savings to report.json",
)
@click.option(
    "--truth",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Generator truth.csv to score the triage against",
)
@pass_app
def triage(
    app: AppContext, out: Path, threshold: float, pricing: Path | None, truth: Path | None
) -> None:
    """Label images KEEP/DISCARD and write scores.csv, report.json, scatter.svg."""
    if not threshold > 0:
        raise click.BadParameter("must be > 0", param_hint="--threshold")
    timer = app.timer()
    with timer.stage("classify"):
        store = DataStore.open(out / pipeline.DATASTORE_DIR)
        pca = load_pca(out)
        if pca.scores is None or pca.k is None:
            raise ValueError(f"{out}: no eigenspace scores, run `reduce` first")
        sidecar = json.loads((out / REDUCE_SIDECAR).read_text())
        report = classify(store, pca.scores, threshold)
    with timer.stage("report"):
        _, files = pipeline.triage_outputs(
            report,
            mode=sidecar["mode"],
            centered=sidecar["centered"],
            stages=[s for s in pipeline.STAGES if s != "upload"],
            pricing_path=pricing,
            truth_path=truth,
        )
        for name, text in files.items():
            artifacts.write_text(out / name, text)
    click.echo(
        f"✅ KEEP {len(report.kept_ids)} / DISCARD {len(report.discarded_ids)} "
        f"(kept fraction {report.kept_fraction:.3f})"
    )


def _money(value: Decimal) -> str:
    return f"{value:,.2f}"


@cli.command()
@click.option(
    "--pricing",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Pricing JSON with one entry per scheme",
)
@click.option("--data-gb", type=str, required=True, help="Dataset size in GB")
@click.option("--compute-hours", type=str, required=True, help="Wall hours per instance")
@click.option("--instances", type=click.IntRange(min=0), default=1, show_default=True)
@click.option("--months", type=str, default="1", show_default=True, help="Storage months")
@click.option("--baseline", default=None, help="Scheme that savings are measured against")
@click.option(
    "--after-gb",
    type=str,
    default=None,
    help="Dataset size after reduction; prints storage savings per scheme",
)
@click.option("--json", "as_json", is_flag=True, help="Emit the ranked table as JSON")
def cost(
    pricing: Path,
    data_gb: str,
    compute_hours: str,
    instances: int,
    months: str,
    baseline: str | None,
    after_gb: str | None,
    as_json: bool,
) -> None:
    """Rank pricing schemes for a workload, cheapest first."""
    schemes = load_pricing(pricing)
    try:
        workload = Workload(
            data_gb=Decimal(data_gb),
            compute_hours=Decimal(compute_hours),
            instance_count=instances,
            storage_months=Decimal(months),
        )
    except (ArithmeticError, ValidationError) as e:
        raise click.UsageError(f"invalid workload: {e}") from e
    ranked = compare(schemes, workload, baseline)
    savings = {}
    if after_gb is not None:
        savings = {
            s.name.value: reduction_savings(data_gb, after_gb, s.storage_rate, months)
            for s in schemes
        }

    if as_json:
        payload = {
            "workload": workload.model_dump(mode="json"),
            "baseline": baseline,
            "ranked": [r.model_dump(mode="json") for r in ranked],
        }
        if savings:
            payload["storage_savings"] = {k: str(v) for k, v in savings.items()}
        click.echo(json.dumps(payload, indent=2))
        return

    click.echo("\n📋 Cost comparison:")
    click.echo(f"  {'scheme':<10} {'total $':>14} {'compute $':>14} {'storage $':>12} {'savings %':>10}")
    for r in ranked:
        e = r.estimate
        click.echo(
            f"  {e.scheme.value:<10} {_money(e.total_dollars):>14} "
            f"{_money(e.breakdown.compute):>14} {_money(e.breakdown.storage):>12} "
            f"{r.savings_pct:>10.2f}"
        )
    for name, value in savings.items():
        click.echo(f"  storage saved under {name}: ${_money(value)}")


@cli.group()
def synth() -> None:
    """Synthetic stacks with planted junk."""


@synth.command("gen")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--good", type=click.IntRange(min=0), default=90, show_default=True)
@click.option("--junk", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--width", type=int, default=32, show_default=True)
@click.option("--height", type=int, default=32, show_default=True)
@click.option("--mrc", is_flag=True, help="Write MRC files instead of raw float64")
@_out_option("Directory for the generated images, manifest and truth.csv")
def synth_gen_command(
    seed: int, good: int, junk: int, width: int, height: int, mrc: bool, out: Path
) -> None:
    """Generate a seeded stack plus its truth.csv."""
    try:
        stack = synth_gen(seed, good, junk, width, height, out=out, mrc=mrc)
    except ValueError as e:
        raise click.UsageError(str(e)) from e
    click.echo(f"✅ {len(stack.records)} images ({junk} junk) written to {out}")


@cli.command()
@click.option("--input", "inputs", multiple=True, required=True, help="Input file/dir/glob")
@click.option("--chunk-size", type=int, default=16, show_default=True)
@workers_option
@click.option("--mode", type=click.Choice(["gram", "pixel"]), default="gram", show_default=True)
@click.option("--no-center", is_flag=True, help="Skip mean subtraction")
@click.option("--components", type=int, default=None, help="Fixed k")
@click.option("--explained", type=float, default=0.9, show_default=True)
@click.option("--threshold", type=float, default=3.5, show_default=True)
@click.option(
    "--pricing",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Pricing JSON to echo into report.json",
)
@click.option(
    "--store",
    default="local:store",
    show_default=True,
    help="Object store for KEEP images and reports (local:<dir>, relative to --out)",
)
@click.option("--parallel-uploads", is_flag=True, help="Upload with a thread pool")
@_out_option("Output directory for the datastore, reports and timings")
@pass_app
def run(
    app: AppContext,
    inputs: tuple[str, ...],
    chunk_size: int,
    workers: int | None,
    mode: str,
    no_center: bool,
    components: int | None,
    explained: float,
    threshold: float,
    pricing: Path | None,
    store: str,
    parallel_uploads: bool,
    out: Path,
) -> None:
    """Run the whole pipeline and upload the KEEP images."""
    cfg = PipelineConfig(
        inputs=list(inputs),
        output_dir=out,
        chunk_images=chunk_size,
        workers=_workers(app, workers),
        executor=app.settings.executor,
        mode=mode,  # type: ignore[arg-type]
        center=not no_center,
        components=components,
        explained=explained,
        threshold=threshold,
        pricing_path=pricing,
        store=store,
        memory_budget_bytes=app.settings.memory_budget_bytes,
        parallel_uploads=parallel_uploads,
        upload_retries=app.settings.upload_retries,
    )
    click.echo("\n📋 Run parameters:")
    click.echo(f"  Inputs: {', '.join(cfg.inputs)}")
    click.echo(f"  Mode: {cfg.mode} (centered={cfg.center})")
    click.echo(f"  Workers: {cfg.workers} ({cfg.executor})")
    click.echo(f"  Threshold: {cfg.threshold}")
    result = pipeline.run_pipeline(cfg, app.events)
    summary = result.payload["summary"]
    click.echo(
        f"✅ KEEP {summary['kept_count']} / DISCARD {summary['discarded_count']} "
        f"(k={summary['k']}); reports in {result.output_dir}"
    )


def main(argv: list[str] | None = None) -> int:
    """Console entry point mapping failures onto exit codes."""
    try:
        rv = cli.main(args=argv, prog_name="cryo-reduce", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except ValidationError as e:
        click.echo(f"Error: invalid configuration: {e}", err=True)
        return EXIT_USAGE
    except StageError as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_FAILURE
    except CryoReduceError as e:
        click.echo(f"Error: [{type(e).__name__}] {e}", err=True)
        return EXIT_FAILURE
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

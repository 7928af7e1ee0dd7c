"""
DMPINN Command Line Interface

Training, comparison, evaluation, λ_max tracking and data export for the
PINN architecture laboratory.

Technical Architecture:
- click command group with per-field run-config overrides
- rich tables, panels and progress bars on the console
- Stable exit codes: 2 invalid config, 3 divergence, 4 manifest mismatch,
  130 interrupted, 1 anything else
"""

import io
import sys
import traceback
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import click
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from . import __version__
from .architectures import NetworkParams
from .evaluation import evaluate_model, reference_for
from .hessian import DEFAULT_TRACK_STRIDE, track_lambda_max
from .models import (
    ConfigurationError, DivergenceError, GradientCheckError, ManifestMismatchError, ProblemName, RunConfig
)
from .problems import get_problem
from .sampling import sample_problem
from .training import (
    RunRecord, RunSummary, materialize, run_seeds, train, write_run_outputs
)
from .utils import (
    OUTPUT_ROOT_ENV, ensure_directory_structure, format_technical_duration, load_params,
    load_run_config, resolve_output_dir, setup_logging, write_csv
)

console = Console()
error_console = Console(stderr=True, style="red")

EXIT_FAILURE = 1
EXIT_INVALID_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_MANIFEST_MISMATCH = 4
EXIT_INTERRUPTED = 130

COMPARISON_HEADER = (
    "architecture", "learning_rate", "mean_rel_l2", "mean_abs_l2", "wall_ms_per_iter", "diverged_runs"
)

PROBLEM_CHOICE = click.Choice([p.value for p in ProblemName])


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.3e}"


@contextmanager
def _handled(ctx: click.Context) -> Iterator[None]:
    """Map laboratory errors onto exit codes."""
    verbose = ctx.obj.get('verbose', False) if ctx.obj else False
    try:
        yield
    except ConfigurationError as e:
        error_console.print(f"INVALID CONFIGURATION: {e}")
        for issue in e.issues:
            error_console.print(f"  - {issue.field}: {issue.message}")
        sys.exit(EXIT_INVALID_CONFIG)
    except ManifestMismatchError as e:
        table = Table(title="Parameter manifest mismatch", border_style="red")
        table.add_column("Name")
        table.add_column("Expected")
        table.add_column("Found")
        for name in sorted(set(e.expected) | set(e.found)):
            if e.expected.get(name) != e.found.get(name):
                table.add_row(name, str(e.expected.get(name)), str(e.found.get(name)))
        error_console.print(table)
        sys.exit(EXIT_MANIFEST_MISMATCH)
    except DivergenceError as e:
        error_console.print(f"DIVERGED: {e}")
        sys.exit(EXIT_DIVERGED)
    except GradientCheckError as e:
        error_console.print(f"GRADIENT CHECK FAILED: {e}")
        sys.exit(EXIT_FAILURE)
    except KeyboardInterrupt:
        error_console.print("\nOperation interrupted by user")
        sys.exit(EXIT_INTERRUPTED)
    except Exception as e:
        error_console.print(f"CRITICAL ERROR: {e}")
        if verbose:
            error_console.print(traceback.format_exc())
        sys.exit(EXIT_FAILURE)


def _load_with_overrides(
    config_path: str,
    seed: Optional[int] = None,
    iters: Optional[int] = None,
    lr: Optional[float] = None,
    budget: Optional[float] = None
) -> RunConfig:
    """Load a run config and apply command-line overrides before materializing."""
    config = load_run_config(config_path)
    update = {}
    if seed is not None:
        update["seeds"] = [seed]
    if iters is not None:
        update.update(iterations=iters, time_budget_s=None)
    if budget is not None:
        update.update(time_budget_s=budget, iterations=None)
    if lr is not None:
        update.update(learning_rate=lr, learning_rates=None)
    return materialize(config.model_copy(update=update))


def run_overrides(command):
    """Shared --seed/--iters/--lr/--out/--budget options."""
    options = [
        click.option("--seed", type=click.IntRange(min=0), help="Run a single seed instead of the configured list"),
        click.option("--iters", type=click.IntRange(min=0), help="Override the iteration count"),
        click.option("--lr", type=click.FloatRange(min=0.0, min_open=True), help="Override the learning rate"),
        click.option("--out", type=click.Path(file_okay=False), help=f"Output directory (default: config output_dir under ${OUTPUT_ROOT_ENV})"),
        click.option("--budget", type=click.FloatRange(min=0.0, min_open=True), help="Wall-clock budget in seconds instead of iterations"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@click.group()
@click.version_option(version=__version__, prog_name="dmpinn")
@click.option("--verbose", "-v", is_flag=True, help="Enable DEBUG logging")
@click.option("--log-file", type=click.Path(dir_okay=False), help="Also write logs to this file")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, log_file: Optional[str]) -> None:
    """
    DMPINN: densely multiplied physics-informed neural network laboratory

    Trains Vanilla, ResNet, ModifiedMLP, DM and SDM networks on the
    AllanCahn, Helmholtz, Burgers and Convection benchmarks and emits
    plot-ready CSV/JSON data.
    """
    ctx.ensure_object(dict)
    ctx.obj['verbose'] = verbose
    setup_logging(verbose=verbose, log_file=log_file)


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Run config (.json/.yaml)")
@run_overrides
@click.pass_context
def train_cmd(
    ctx: click.Context,
    config_path: str,
    seed: Optional[int],
    iters: Optional[int],
    lr: Optional[float],
    out: Optional[str],
    budget: Optional[float]
) -> None:
    """
    Train one architecture over the configured seeds.

    Writes seed_<s>/history.csv, seed_<s>/params.json,
    seed_<s>/error_field.csv and summary.json.
    """
    with _handled(ctx):
        config = _load_with_overrides(config_path, seed, iters, lr, budget)
        if config.architectures and config.architecture is None:
            raise ConfigurationError("train runs one architecture; use 'compare' for an architectures list")
        out_dir = ensure_directory_structure(resolve_output_dir(out, config))
        records: List[RunRecord] = []

        with Progress(
            TextColumn("[cyan]{task.description}"), BarColumn(), TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(), console=console, transient=True
        ) as progress:
            for run_seed in config.seeds:
                task = progress.add_task(f"{config.architecture.value} seed {run_seed}", total=config.iterations)

                def advance(iteration: int, total: Optional[int], row) -> None:
                    progress.update(task, completed=iteration)

                result = train(config, seed=run_seed, progress=advance)
                write_run_outputs(result, out_dir)
                records.append(RunRecord.from_result(result))
                progress.remove_task(task)

        summary = RunSummary(config=config, kind=config.architecture, learning_rate=config.learning_rate, records=records)
        summary.write(out_dir)
        _display_run_summary(summary, out_dir)

        if summary.diverged_runs:
            error_console.print(f"DIVERGED: {summary.diverged_runs} run(s); partial outputs kept in {out_dir}")
            sys.exit(EXIT_DIVERGED)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Run config listing architectures")
@run_overrides
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Parallel seed runs per cell")
@click.pass_context
def compare(
    ctx: click.Context,
    config_path: str,
    seed: Optional[int],
    iters: Optional[int],
    lr: Optional[float],
    out: Optional[str],
    budget: Optional[float],
    workers: int
) -> None:
    """
    Run every architecture (and learning rate) under identical seeds.

    Writes one train layout per <architecture>[_lr<lr>] plus
    comparison.csv and comparison.txt.
    """
    with _handled(ctx):
        config = _load_with_overrides(config_path, seed, iters, lr, budget)
        kinds = config.architectures or [config.architecture]
        rates = config.learning_rates or [config.learning_rate]
        out_dir = ensure_directory_structure(resolve_output_dir(out, config))
        summaries: List[RunSummary] = []

        with Progress(console=console, transient=True) as progress:
            task = progress.add_task("[cyan]Comparing architectures...", total=len(kinds) * len(rates) * len(config.seeds))
            for kind in kinds:
                for rate in rates:
                    name = kind.value if len(rates) == 1 else f"{kind.value}_lr{rate:g}"
                    summaries.append(run_seeds(
                        config, kind=kind, learning_rate=rate, directory=out_dir / name, workers=workers,
                        on_record=lambda record: progress.advance(task)
                    ))

        rows = [
            (s.kind.value, s.learning_rate, s.mean_rel_l2, s.mean_abs_l2, s.wall_ms_per_iter, s.diverged_runs)
            for s in summaries
        ]
        write_csv(out_dir / "comparison.csv", COMPARISON_HEADER, rows)
        table = _comparison_table(config, summaries)
        recorder = Console(record=True, width=120, file=io.StringIO())
        recorder.print(table)
        (out_dir / "comparison.txt").write_text(recorder.export_text(), encoding="utf-8")
        console.print(table)
        console.print(f"[green]Comparison written to {out_dir}[/green]")

        diverged = sum(s.diverged_runs for s in summaries)
        if diverged:
            error_console.print(f"DIVERGED: {diverged} run(s); remaining results kept")
            sys.exit(EXIT_DIVERGED)


@cli.command()
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), required=True, help="params.json written by train")
@click.option("--problem", type=PROBLEM_CHOICE, required=True, help="Benchmark problem")
@click.option("--resolution", type=(click.IntRange(min=2), click.IntRange(min=2)), default=None, help="Grid size along (axis0, axis1)")
@click.option("--out", type=click.Path(dir_okay=False), help="Error-field CSV (default: evaluation.csv next to the params)")
@click.pass_context
def evaluate(
    ctx: click.Context,
    params_path: str,
    problem: str,
    resolution: Optional[Tuple[int, int]],
    out: Optional[str]
) -> None:
    """Evaluate saved parameters against the problem reference."""
    with _handled(ctx):
        spec = get_problem(problem)
        params = _load_checked_params(params_path, spec)
        result = evaluate_model(params, spec, resolution)
        target = Path(out) if out else Path(params_path).parent / "evaluation.csv"
        result.export_csv(target)
        console.print(Panel(
            f"rel_l2 = {result.rel_l2!r}\nabs_l2 = {result.abs_l2!r}\n"
            f"grid = {result.reference.shape[0]}x{result.reference.shape[1]} ({result.reference.provenance.value})\n"
            f"error field: {target}",
            title=f"{spec.name.value} evaluation",
            border_style="cyan"
        ))


def _load_checked_params(params_path: str, spec) -> NetworkParams:
    """Stored network descriptor (preset when absent), checked against the problem's input dimension."""
    try:
        params = load_params(params_path)
    except ConfigurationError as e:
        if "no 'network' descriptor" not in str(e):
            raise
        params = load_params(params_path, spec.network_config())
    if params.config.input_dim != spec.input_dim:
        expected_config = params.config.model_copy(update={"input_dim": spec.input_dim})
        raise ManifestMismatchError(NetworkParams.expected_manifest(expected_config), params.manifest())
    return params


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Run config (architecture or architectures)")
@click.option("--stride", type=click.IntRange(min=1), default=DEFAULT_TRACK_STRIDE, show_default=True, help="Iterations between λ_max checkpoints")
@click.option("--seed", type=click.IntRange(min=0), help="Seed (default: first configured seed)")
@click.option("--iters", type=click.IntRange(min=0), help="Override the iteration count")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory")
@click.pass_context
def track(
    ctx: click.Context,
    config_path: str,
    stride: int,
    seed: Optional[int],
    iters: Optional[int],
    out: Optional[str]
) -> None:
    """Track the largest Hessian eigenvalue during training, per architecture."""
    with _handled(ctx):
        config = _load_with_overrides(config_path, seed=seed, iters=iters)
        kinds = config.architectures or [config.architecture]
        out_dir = ensure_directory_structure(resolve_output_dir(out, config))

        table = Table(title=f"λ_max tracking: {config.problem.value} (stride {stride})", border_style="cyan")
        table.add_column("Architecture", style="cyan")
        table.add_column("Checkpoints", justify="right")
        table.add_column("First λ_max", justify="right")
        table.add_column("Last λ_max", justify="right")
        table.add_column("Final rel_l2", justify="right")

        diverged = []
        with Progress(console=console, transient=True) as progress:
            for kind in kinds:
                task = progress.add_task(f"[cyan]{kind.value}", total=config.iterations)
                series = track_lambda_max(
                    config, stride=stride, seed=seed, kind=kind,
                    progress=lambda iteration, total, row: progress.update(task, completed=iteration)
                )
                kind_dir = out_dir / kind.value
                write_run_outputs(series.result, kind_dir)
                write_csv(kind_dir / "lambda_max.csv", ("iteration", "lambda_max"), series.points)
                if series.result.diverged:
                    diverged.append(kind.value)
                values = [value for _, value in series.points]
                table.add_row(
                    kind.value, str(len(values)),
                    _fmt(values[0] if values else None), _fmt(values[-1] if values else None),
                    _fmt(series.result.rel_l2)
                )

        console.print(table)
        if diverged:
            error_console.print(f"DIVERGED: {', '.join(diverged)}")
            sys.exit(EXIT_DIVERGED)


@cli.command()
@click.option("--problem", type=PROBLEM_CHOICE, required=True, help="Benchmark problem")
@click.option("--resolution", type=(click.IntRange(min=2), click.IntRange(min=2)), default=None, help="Grid size along (axis0, axis1)")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Output CSV")
@click.pass_context
def reference(ctx: click.Context, problem: str, resolution: Optional[Tuple[int, int]], out: str) -> None:
    """Export the reference solution grid of a problem."""
    with _handled(ctx):
        spec = get_problem(problem)
        grid = reference_for(spec, resolution)
        grid.export_csv(out)
        console.print(Panel(
            f"{grid.labels[0]} x {grid.labels[1]} = {grid.shape[0]} x {grid.shape[1]}\n"
            f"provenance: {grid.provenance.value}\nwritten: {out}",
            title=f"{spec.name.value} reference",
            border_style="green"
        ))


@cli.command()
@click.option("--problem", type=PROBLEM_CHOICE, required=True, help="Benchmark problem")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Sampling seed")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory")
@click.pass_context
def sample(ctx: click.Context, problem: str, seed: int, out: str) -> None:
    """Export the training sample of a problem as CSV files."""
    with _handled(ctx):
        spec = get_problem(problem)
        samples = sample_problem(spec, seed)
        written = samples.export_csv(out)
        table = Table(title=f"{spec.name.value} sample (seed {seed})", border_style="cyan")
        table.add_column("Set", style="cyan")
        table.add_column("Points", justify="right")
        for name, points in samples.iter_sets():
            table.add_row(name, str(points.shape[0]))
        console.print(table)
        console.print(f"[green]{len(written)} files written to {out}[/green]")


def _display_run_summary(summary: RunSummary, out_dir: Path) -> None:
    table = Table(title=f"{summary.config.problem.value} / {summary.kind.value} (lr={summary.learning_rate:g})", border_style="cyan")
    table.add_column("Seed", justify="right")
    table.add_column("rel_l2", justify="right")
    table.add_column("abs_l2", justify="right")
    table.add_column("Iterations", justify="right")
    table.add_column("Status")
    for record in summary.records:
        status = "[red]diverged[/red]" if record.diverged else "[green]ok[/green]"
        table.add_row(str(record.seed), _fmt(record.rel_l2), _fmt(record.abs_l2), str(record.iterations), status)
    console.print(table)

    lines = [
        f"mean rel_l2: {_fmt(summary.mean_rel_l2)}",
        f"mean abs_l2: {_fmt(summary.mean_abs_l2)}",
    ]
    if summary.wall_ms_per_iter is not None:
        lines.append(f"wall time per iteration: {format_technical_duration(summary.wall_ms_per_iter / 1000.0)}")
    lines.append(f"outputs: {out_dir}")
    console.print(Panel("\n".join(lines), title="Summary", border_style="green"))


def _comparison_table(config: RunConfig, summaries: List[RunSummary]) -> Table:
    best = min((s.mean_rel_l2 for s in summaries if s.mean_rel_l2 is not None), default=None)
    table = Table(title=f"{config.problem.value} comparison", border_style="cyan")
    table.add_column("Architecture", style="cyan")
    table.add_column("lr", justify="right")
    table.add_column("Mean rel_l2", justify="right")
    table.add_column("Mean abs_l2", justify="right")
    table.add_column("ms/iter", justify="right")
    table.add_column("Diverged", justify="right")
    for s in summaries:
        mark = "bold green" if best is not None and s.mean_rel_l2 == best else None
        table.add_row(
            s.kind.value, f"{s.learning_rate:g}", _fmt(s.mean_rel_l2), _fmt(s.mean_abs_l2),
            "-" if s.wall_ms_per_iter is None else f"{s.wall_ms_per_iter:.2f}",
            str(s.diverged_runs), style=mark
        )
    return table


def main() -> None:
    """Main CLI entry point."""
    try:
        cli()
    except KeyboardInterrupt:
        error_console.print("\nOperation interrupted by user")
        sys.exit(EXIT_INTERRUPTED)


if __name__ == "__main__":
    main()

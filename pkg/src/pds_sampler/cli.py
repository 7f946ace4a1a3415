#!/usr/bin/env python3
"""CLI for pds-sampler experiments."""

import csv
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
import typer

from .config import ConfigError, DEFAULT_CONFIG, ExperimentConfig, build_experiment, create_sample_config, load_config
from .filters import (
    ParametricFilterSpec,
    StatisticalFilterSpec,
    build_parametric_r,
    build_space_a,
    build_statistical_r,
    filter_summary,
    load_samples,
)
from .grid import Field, GridFormatError, GridShape, read_grid, read_grid_header, write_grid
from .metrics import checkpoint_metrics, condition_number, spectral_error
from .report import render_report
from .sampler import DivergenceError, SamplerConfig, finals_array, resolve_workers, run_batch
from .targets import GaussianTarget, GrfTarget

app = typer.Typer(add_completion=False, no_args_is_help=True)
filter_app = typer.Typer(add_completion=False, no_args_is_help=True, help="Build preconditioning filters (PDSGRID1 files).")
app.add_typer(filter_app, name="build-filter")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

METRIC_COLUMNS = ["sampler", "iteration", "w2", "spectral_error", "mean_err"]
TIMING_COLUMNS = ["sampler", "iterations", "wall_time_s"]
BENCHMARK_COLUMNS = ["sampler", "T_needed", "speedup_vs_vanilla"]
CURVE_COLUMNS = ["sampler", "iteration", "error"]


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@contextmanager
def handle_errors(verbose: bool) -> Iterator[None]:
    """Map library failures onto exit codes: 2 bad input, 3 divergence, 1 anything else."""
    try:
        yield
    except typer.Exit:
        raise
    except KeyboardInterrupt:
        typer.echo("\n⏹️  Operation cancelled by user", err=True)
        raise typer.Exit(EXIT_ERROR)
    except DivergenceError as e:
        typer.echo(f"💥 Sampler '{e.sampler}' diverged at iteration {e.iteration}: {e}", err=True)
        raise typer.Exit(EXIT_DIVERGED)
    except (ConfigError, GridFormatError, FileNotFoundError, ValueError) as e:
        typer.echo(f"❌ Invalid input: {e}", err=True)
        raise typer.Exit(EXIT_CONFIG)
    except Exception as e:
        typer.echo(f"❌ Error: {str(e)}", err=True)
        if verbose:
            import traceback

            typer.echo("🔍 Full error traceback:", err=True)
            typer.echo(traceback.format_exc(), err=True)
        raise typer.Exit(EXIT_ERROR)


def format_cell(value: Any) -> str:
    """CSV cell: floats at 12 significant digits, missing values empty."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_csv(path: Path, columns: List[str], rows: List[Dict[str, Any]]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(column)) for column in columns])
    return path


def _load_experiment(
    config_file: Optional[Path],
    out_dir: Optional[Path],
    chains: Optional[int],
    seed: Optional[int],
    benchmark: bool,
) -> ExperimentConfig:
    if config_file is not None and not config_file.is_file():
        raise ConfigError(f"config file not found: {config_file}")
    # without a file: pds-sampler.json, pds-sampler.conf, ~/.config/pds-sampler/config.json
    config_data = load_config(config_file)
    overrides: Dict[str, Any] = {}
    if chains is not None:
        overrides["chains"] = chains
    if seed is not None:
        overrides["seed"] = seed
    if out_dir is not None:
        overrides["out_dir"] = str(out_dir)
    config_data["experiment"] = {**config_data.get("experiment", {}), **overrides}
    return build_experiment(config_data, benchmark=benchmark)


def _target_summary(experiment: ExperimentConfig) -> Dict[str, Any]:
    target = experiment.target
    cond = None
    if isinstance(target, (GaussianTarget, GrfTarget)):
        cond = condition_number(target)
    return {
        "kind": str(experiment.raw.get("target", {}).get("kind", type(target).__name__)),
        "shape": str(target.shape),
        "condition_number": cond,
    }


def _sampler_summary(name: str, config: SamplerConfig, wall_time: float) -> Dict[str, Any]:
    p = config.preconditioner
    if p is None:
        preconditioner = "none"
    elif p.is_identity:
        preconditioner = "identity"
    else:
        preconditioner = f"R∈[{p.r.data.min():.3g}, {p.r.data.max():.3g}]"
        if not p.uniform_space:
            preconditioner += f", A∈[{p.a.data.min():.3g}, 1]"
    return {
        "name": name,
        "iterations": config.schedule.iterations,
        "step": config.schedule.step,
        "preconditioner": preconditioner,
        "skew": config.skew.describe() if config.skew else None,
        "omega": config.omega,
        "wall_time": wall_time,
    }


def _run_sampler(
    experiment: ExperimentConfig,
    name: str,
    config: SamplerConfig,
    on_checkpoint,
    verbose: bool,
):
    if verbose:
        typer.echo(
            f"🌀 {name}: {config.schedule.iterations} iterations, ε={config.schedule.step:.4g}, "
            f"{experiment.chains} chains"
        )
    return run_batch(experiment.target, config, experiment.chains, observer=on_checkpoint)


def _write_finals(out_dir: Path, name: str, trajectories) -> List[str]:
    finals = finals_array(trajectories)
    mean_path = write_grid(out_dir / f"final_{name}.pdsgrid", Field(finals.mean(axis=0)))
    chain_path = write_grid(out_dir / f"chain0_{name}.pdsgrid", trajectories[0].final)
    return [mean_path.name, chain_path.name]


@app.command()
def sample(
    config_file: Optional[Path] = typer.Argument(
        None, help="Experiment config (.json or dotted key = value text); searched for when omitted"
    ),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Directory for all output files"),
    chains: Optional[int] = typer.Option(None, "--chains", help="Override experiment.chains"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override experiment.seed"),
    report: bool = typer.Option(True, "--report/--no-report", help="Render report.md"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Run every configured sampler and write per-checkpoint metrics and final states."""
    configure_logging(verbose)
    with handle_errors(verbose):
        experiment = _load_experiment(config_file, out_dir, chains, seed, benchmark=False)
        output_directory = experiment.out_dir
        output_directory.mkdir(parents=True, exist_ok=True)
        if verbose:
            typer.echo(f"📁 Output directory: {output_directory}")

        rows: List[Dict[str, Any]] = []
        timing: List[Dict[str, Any]] = []
        summaries: List[Dict[str, Any]] = []
        files: List[str] = []

        for name, config in experiment.samplers.items():
            def on_checkpoint(iteration: int, states: np.ndarray, name: str = name) -> None:
                row: Dict[str, Any] = {"sampler": name, "iteration": iteration}
                if states.shape[0] >= 2:
                    row.update(checkpoint_metrics(states, experiment.target, experiment.metric_mode))
                rows.append(row)

            trajectories = _run_sampler(experiment, name, config, on_checkpoint, verbose)
            wall_time = trajectories[0].wall_time
            timing.append({"sampler": name, "iterations": config.schedule.iterations, "wall_time_s": wall_time})
            summaries.append(_sampler_summary(name, config, wall_time))
            files.extend(_write_finals(output_directory, name, trajectories))
            typer.echo(f"✅ {name}: {config.schedule.iterations} iterations in {wall_time:.2f}s")

        write_csv(output_directory / "metrics.csv", METRIC_COLUMNS, rows)
        write_csv(output_directory / "timing.csv", TIMING_COLUMNS, timing)
        files = ["metrics.csv", "timing.csv"] + files

        if report:
            last = {}
            for row in rows:
                last[row["sampler"]] = row
            render_report(
                {
                    "command": "sample",
                    "target": _target_summary(experiment),
                    "chains": experiment.chains,
                    "seed": experiment.seed,
                    "samplers": summaries,
                    "final_metrics": [
                        {"w2": None, "spectral_error": None, "mean_err": None, **row} for row in last.values()
                    ],
                    "benchmark": None,
                    "files": files + ["report.md"],
                },
                output_directory / "report.md",
                experiment.raw,
            )
        typer.echo(f"📊 Wrote {len(rows)} metric rows to {output_directory / 'metrics.csv'}")


def _speedup(reference: Optional[int], needed: Optional[int]) -> Optional[float]:
    if reference is None or needed is None:
        return None
    return reference / needed


@app.command()
def benchmark(
    config_file: Optional[Path] = typer.Argument(
        None, help="Experiment config with experiment.threshold and max_iterations; searched for when omitted"
    ),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Directory for all output files"),
    chains: Optional[int] = typer.Option(None, "--chains", help="Override experiment.chains"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override experiment.seed"),
    report: bool = typer.Option(True, "--report/--no-report", help="Render report.md"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Find the iterations each sampler needs to reach the error threshold.

    The error is the spectral error for GRF targets and the Gaussian W2
    distance otherwise, evaluated at every checkpoint of one run of
    max_iterations steps (or up to the first hit when stop_at_threshold is on).
    """
    configure_logging(verbose)
    with handle_errors(verbose):
        experiment = _load_experiment(config_file, out_dir, chains, seed, benchmark=True)
        if experiment.chains < 2:
            raise ConfigError("benchmark needs experiment.chains >= 2")
        output_directory = experiment.out_dir
        output_directory.mkdir(parents=True, exist_ok=True)
        target = experiment.target
        criterion = "spectral_error" if isinstance(target, GrfTarget) else "w2"
        typer.echo(f"🎯 Threshold: {criterion} ≤ {experiment.threshold} within {experiment.max_iterations} iterations")

        curve: List[Dict[str, Any]] = []
        needed: Dict[str, Optional[int]] = {}
        summaries: List[Dict[str, Any]] = []

        for name, config in experiment.samplers.items():
            needed[name] = None

            def on_checkpoint(iteration: int, states: np.ndarray, name: str = name) -> bool:
                if criterion == "spectral_error":
                    error = spectral_error(states, target)
                else:
                    error = checkpoint_metrics(states, target, experiment.metric_mode)["w2"]
                curve.append({"sampler": name, "iteration": iteration, "error": error})
                if needed[name] is None and error <= experiment.threshold:
                    needed[name] = iteration
                return experiment.stop_at_threshold and needed[name] is not None

            trajectories = _run_sampler(experiment, name, config, on_checkpoint, verbose)
            summaries.append(_sampler_summary(name, config, trajectories[0].wall_time))
            status = f"T = {needed[name]}" if needed[name] is not None else "not reached"
            typer.echo(f"✅ {name}: {status}")

        names = list(experiment.samplers)
        reference = "vanilla" if "vanilla" in needed else names[0]
        rows = [
            {
                "sampler": name,
                "T_needed": needed[name] if needed[name] is not None else "not reached",
                "speedup_vs_vanilla": _speedup(needed[reference], needed[name]),
            }
            for name in names
        ]
        write_csv(output_directory / "benchmark.csv", BENCHMARK_COLUMNS, rows)
        write_csv(output_directory / "benchmark_curve.csv", CURVE_COLUMNS, curve)

        for row in rows:
            speedup = row["speedup_vs_vanilla"]
            if speedup is not None:
                typer.echo(f"🚀 {row['sampler']}: {speedup:.2f}× vs {reference}")

        if report:
            render_report(
                {
                    "command": "benchmark",
                    "target": _target_summary(experiment),
                    "chains": experiment.chains,
                    "seed": experiment.seed,
                    "samplers": summaries,
                    "final_metrics": [],
                    "benchmark": {
                        "criterion": criterion,
                        "threshold": experiment.threshold,
                        "reference": reference,
                        "rows": [
                            {"sampler": name, "t_needed": needed[name], "speedup": _speedup(needed[reference], needed[name])}
                            for name in names
                        ],
                    },
                    "files": ["benchmark.csv", "benchmark_curve.csv", "report.md"],
                },
                output_directory / "report.md",
                experiment.raw,
            )


@app.command()
def info(
    grid_file: Path = typer.Argument(..., help="PDSGRID1 file"),
    stats: bool = typer.Option(False, "--stats", help="Also read the payload and print min/max/mean"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Print the header of a PDSGRID1 file."""
    configure_logging(verbose)
    with handle_errors(verbose):
        shape = read_grid_header(grid_file)
        typer.echo(f"📄 {grid_file.name}: PDSGRID1 {shape} ({shape.size} values)")
        if stats:
            values = read_grid(grid_file).data
            typer.echo(f"   min {values.min():.6g}  max {values.max():.6g}  mean {values.mean():.6g}")


def _write_filter(field: Field, out_dir: Path, name: str) -> None:
    path = write_grid(out_dir / Path(name).name, field)
    summary = filter_summary(field)
    typer.echo(f"✅ Wrote {path}: shape {summary['shape']}, min {summary['min']:.6g}, max {summary['max']:.6g}")


@filter_app.command("parametric")
def build_parametric(
    height: int = typer.Option(..., "--height", help="Grid height H"),
    width: int = typer.Option(..., "--width", help="Grid width W"),
    channels: int = typer.Option(1, "--channels", help="Channels C"),
    r: float = typer.Option(..., "--r", help="Circle radius in pixels (e.g. 0.2·H)"),
    lam: float = typer.Option(..., "--lambda", help="Gain outside the circle"),
    out_dir: Path = typer.Option(Path("."), "--out-dir", "-o", help="Output directory"),
    name: str = typer.Option("frequency_filter.pdsgrid", "--name", help="Output file name"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Circular-mask frequency filter: 1 inside the radius, lambda outside."""
    configure_logging(verbose)
    with handle_errors(verbose):
        field = build_parametric_r(GridShape(channels, height, width), ParametricFilterSpec(r, lam))
        _write_filter(field, out_dir, name)


@filter_app.command("statistical")
def build_statistical(
    samples_dir: Path = typer.Option(..., "--samples-dir", help="Directory of PDSGRID1 samples"),
    alpha: float = typer.Option(5.0, "--alpha", help="Smoothing factor (>= 1)"),
    count: int = typer.Option(200, "--count", help="Number of samples to use"),
    seed: int = typer.Option(0, "--seed", help="Seed for choosing the sample subset"),
    out_dir: Path = typer.Option(Path("."), "--out-dir", "-o", help="Output directory"),
    name: str = typer.Option("frequency_filter.pdsgrid", "--name", help="Output file name"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Frequency filter from the log mean power spectrum of samples."""
    configure_logging(verbose)
    with handle_errors(verbose):
        samples = load_samples(samples_dir, count=count, seed=seed)
        if verbose:
            typer.echo(f"📦 Loaded {len(samples)} samples from {samples_dir}")
        _write_filter(build_statistical_r(samples, StatisticalFilterSpec(alpha)), out_dir, name)


@filter_app.command("space")
def build_space(
    samples_dir: Path = typer.Option(..., "--samples-dir", help="Directory of non-negative PDSGRID1 samples"),
    count: Optional[int] = typer.Option(None, "--count", help="Number of samples to use (default: all)"),
    seed: int = typer.Option(0, "--seed", help="Seed for choosing the sample subset"),
    out_dir: Path = typer.Option(Path("."), "--out-dir", "-o", help="Output directory"),
    name: str = typer.Option("space_filter.pdsgrid", "--name", help="Output file name"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """Space filter from the log mean pixel value of samples."""
    configure_logging(verbose)
    with handle_errors(verbose):
        samples = load_samples(samples_dir, count=count, seed=seed)
        _write_filter(build_space_a(samples), out_dir, name)


@app.command()
def config(
    write: Optional[Path] = typer.Option(None, "--write", help="Write a sample benchmark config to this path"),
):
    """Show default configuration or write a sample experiment file."""
    if write:
        create_sample_config(write)
        typer.echo(f"✅ Sample config written to {write}")
        return

    typer.echo("🔧 pds-sampler default configuration")
    typer.echo(json.dumps(DEFAULT_CONFIG, indent=2))
    typer.echo("\n📝 Config files:")
    typer.echo("  • JSON (nested sections) or text with one 'key = value' per line")
    typer.echo("  • [section] headers prefix the keys that follow; '#' starts a comment")
    typer.echo("  • Samplers live under samplers.<name>, e.g. samplers.pds.preconditioner = parametric")
    typer.echo("\n🧵 Threads: set PDS_THREADS to cap chain parallelism (0 or unset = default)")


@app.command()
def doctor():
    """Check numerical dependencies and thread settings."""
    typer.echo("🔍 System Diagnostic")
    typer.echo("=" * 40)

    import sys
    from importlib import metadata

    typer.echo(f"🐍 Python version: {sys.version.split()[0]}")

    for package in ("numpy", "scipy", "typer", "Jinja2"):
        try:
            typer.echo(f"✅ {package}: {metadata.version(package)}")
        except metadata.PackageNotFoundError:
            typer.echo(f"❌ {package}: Missing")

    typer.echo(f"🧵 Worker threads: {resolve_workers()}")


if __name__ == "__main__":
    app()

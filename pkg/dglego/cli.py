#!/usr/bin/env python
"""
Command-line interface for DGL / LEGO experiments.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
import logging
from pathlib import Path
from typing import Callable, List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from dglego.config import CHECKPOINT_FILE, KERNEL_SPECS_JSON, LOG_FORMAT, LOG_LEVEL, RUN_LOG
from dglego.data.loaders import load_split
from dglego.exceptions import ConfigError, DglegoError, NumericalError
from dglego.experiments.ib_report import ib_report
from dglego.experiments.metrics import emit_metrics, final_metrics, read_summary
from dglego.experiments.oracles import run_oracle_suite
from dglego.experiments.pipeline import (
    StepResult,
    default_kernel_specs,
    fit_kernel_params,
    pipeline,
    run_e2e,
    run_lego,
    run_monitor,
    run_random_baseline,
    with_optimizer,
    write_step,
)
from dglego.models.experiment import ExperimentConfig, OptimizerConfig, RunRecord
from dglego.nn.checkpoint import load_stack
from dglego.utils.persistence import load_config, load_kernel_specs, run_directory

app = typer.Typer(help="Deep Gaussian Layer-wise (DGL) losses and LEGO training experiments.")
console = Console()
logger = logging.getLogger("dglego")

ConfigOption = typer.Option(None, "--config", "-c", help="YAML config file or name of a shipped config")
SeedOption = typer.Option(None, "--seed", help="Override the run seed")
OutOption = typer.Option(None, "--out", help="Output directory (overrides output_dir)")
DatasetDirOption = typer.Option(None, "--dataset-dir", help="Dataset root (overrides DGLEGO_DATASET_DIR)")
SetOption = typer.Option(None, "--set", help="Override a config key: section.key=value (repeatable)")
LogLevelOption = typer.Option(LOG_LEVEL, "--log-level", help="Logging level")


def _configure_logging(level: str, log_file: Optional[Path] = None) -> None:
    handlers: List[logging.Handler] = [RichHandler(rich_tracebacks=True, console=Console(stderr=True))]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)
    logging.basicConfig(level=level.upper(), format="%(message)s", handlers=handlers, force=True)


def _prepare(
    config_path: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    overrides: Optional[List[str]],
    log_level: str,
) -> ExperimentConfig:
    _configure_logging(log_level)
    config = load_config(config_path, overrides or [])
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if out is not None:
        updates["output_dir"] = out
    if updates:
        config = config.model_copy(update=updates)
    _configure_logging(log_level, run_directory(config) / RUN_LOG)
    logger.info(f"Run {config.run_name} (seed {config.seed}) -> {run_directory(config)}")
    return config


def _guarded(body: Callable[[], None]) -> None:
    """Run a command body, mapping dglego errors to exit codes."""
    try:
        body()
    except DglegoError as e:
        logger.error(f"{type(e).__name__}: {e}")
        record = getattr(e, "record", None)
        if isinstance(record, RunRecord):
            logger.error(f"partial record with {len(record.rows)} rows")
        raise typer.Exit(code=e.exit_code)


def _load_checkpoint(path: Path):
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run e2e first or pass --checkpoint")
    return load_stack(path)


def _show(title: str, record: RunRecord) -> None:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in final_metrics(record).items():
        if "/wall_time" not in key:
            table.add_row(key, f"{value:.6g}")
    console.print(table)


def _write(config: ExperimentConfig, step: str, result: StepResult) -> None:
    paths = write_step(config, run_directory(config, step), result)
    _show(f"{step} ({config.run_name})", result.record)
    console.print(f"[dim]Wrote {', '.join(str(p) for p in paths.values())}[/dim]")


def _e2e_optimizer(config: ExperimentConfig) -> ExperimentConfig:
    """Adopt the optimizer selected by a previous e2e run, if there is one."""
    summary_dir = run_directory(config, "e2e")
    if not (summary_dir / "summary.json").exists():
        return config
    chosen = read_summary(summary_dir).get("metadata", {}).get("optimizer")
    if not chosen:
        return config
    logger.info(f"Using the e2e optimizer from {summary_dir}: {chosen}")
    return with_optimizer(config, OptimizerConfig.model_validate(chosen))


@app.command()
def e2e(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
):
    """Step 1: end-to-end MSE training."""

    def body():
        config = _prepare(config_path, seed, out, overrides, log_level)
        _write(config, "e2e", run_e2e(config, dataset_dir=dataset_dir))

    _guarded(body)


@app.command("fit-kernel")
def fit_kernel(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Trained stack; defaults to the e2e output"),
):
    """Step 2: per-layer top-network parameters by validation DGL."""

    def body():
        config = _prepare(config_path, seed, out, overrides, log_level)
        path = checkpoint or run_directory(config, "e2e") / CHECKPOINT_FILE
        _write(config, "fit-kernel", fit_kernel_params(config, _load_checkpoint(path), dataset_dir=dataset_dir))

    _guarded(body)


@app.command()
def monitor(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
    kernel_specs: Optional[Path] = typer.Option(None, "--kernel-specs", help="Defaults to the fit-kernel output"),
):
    """Step 3: end-to-end training with per-layer DGL monitoring."""

    def body():
        config = _e2e_optimizer(_prepare(config_path, seed, out, overrides, log_level))
        specs = load_kernel_specs(kernel_specs or run_directory(config, "fit-kernel") / KERNEL_SPECS_JSON)
        _write(config, "monitor", run_monitor(config, specs, dataset_dir=dataset_dir))

    _guarded(body)


@app.command()
def lego(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
    kernel_specs: Optional[Path] = typer.Option(None, "--kernel-specs", help="Defaults to the fit-kernel output"),
):
    """Steps 4-5: layer-wise DGL training, then the classifier alone."""

    def body():
        config = _prepare(config_path, seed, out, overrides, log_level)
        path = kernel_specs or run_directory(config, "fit-kernel") / KERNEL_SPECS_JSON
        if kernel_specs is None and not path.exists():
            logger.warning(f"{path} not found; using top-network specs matching the initialization prior")
            specs = default_kernel_specs(config)
        else:
            specs = load_kernel_specs(path)
        _write(config, "lego", run_lego(config, specs, dataset_dir=dataset_dir))

    _guarded(body)


@app.command("random-baseline")
def random_baseline(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
):
    """Classifier-only training on frozen random layers."""

    def body():
        config = _prepare(config_path, seed, out, overrides, log_level)
        _write(config, "random-baseline", run_random_baseline(config, dataset_dir=dataset_dir))

    _guarded(body)


@app.command("pipeline")
def run_pipeline(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
):
    """Steps 1-5 plus the random baseline on one split."""

    def body():
        config = _prepare(config_path, seed, out, overrides, log_level)
        results = pipeline(config, run_directory(config), dataset_dir=dataset_dir)
        table = Table(title=f"Pipeline {config.run_name}")
        table.add_column("Step", style="cyan")
        table.add_column("Test accuracy", style="green")
        for step, result in results.items():
            accuracy = result.record.last("test", "best_accuracy")
            table.add_row(step, "-" if accuracy is None else f"{100 * accuracy:.2f}%")
        console.print(table)

    _guarded(body)


@app.command("oracle-suite")
def oracle_suite(
    seed: int = typer.Option(0, "--seed", help="Seed of the oracle RNG"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write oracle metrics here"),
    quick: bool = typer.Option(False, "--quick", help="Smaller problem sizes"),
    only: Optional[List[str]] = typer.Option(None, "--only", help="Run checks with this name prefix (repeatable)"),
    log_level: str = LogLevelOption,
):
    """Run every brute-force cross-check of the analytic machinery."""

    def body():
        _configure_logging(log_level, (out / RUN_LOG) if out else None)
        results = run_oracle_suite(seed=seed, quick=quick, only=only)
        table = Table(title="Oracle suite")
        table.add_column("Check", style="cyan")
        table.add_column("Error", style="magenta")
        table.add_column("Tolerance", style="blue")
        table.add_column("Status")
        record = RunRecord(kind="oracle-suite", metadata={"seed": seed, "quick": quick})
        for result in results:
            status = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
            table.add_row(result.name, f"{result.error:.3e}", f"{result.tolerance:.1e}", status)
            record.add(0, "oracle", result.name, result.error)
        console.print(table)
        if out is not None:
            emit_metrics(record, out)
        failed = [r.name for r in results if not r.passed]
        if failed:
            raise NumericalError(f"oracle checks failed: {', '.join(failed)}")

    _guarded(body)


@app.command("ib-report")
def ib_report_command(
    config_path: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    dataset_dir: Optional[Path] = DatasetDirOption,
    overrides: Optional[List[str]] = SetOption,
    log_level: str = LogLevelOption,
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Trained stack; defaults to the e2e output"),
    split_name: str = typer.Option("train", "--split", help="train, val or test"),
    sigma_eps: Optional[float] = typer.Option(None, "--sigma-eps", help="Regulator scale (default: relative)"),
    beta: float = typer.Option(1.0, "--beta", help="IB trade-off"),
    max_points: int = typer.Option(1000, "--max-points", help="Subsample size"),
):
    """Pair-distribution functions and mutual-information estimates per layer."""

    def body():
        config = _prepare(config_path, seed, out, overrides, log_level)
        path = checkpoint or run_directory(config, "e2e") / CHECKPOINT_FILE
        split = load_split(config.dataset, config.seed, dataset_dir)
        data = {"train": split.train, "val": split.val, "test": split.test}.get(split_name)
        if data is None:
            raise ConfigError(f"unknown split {split_name!r}")
        directory = run_directory(config, "ib-report")
        result = ib_report(_load_checkpoint(path), data, directory, sigma_eps, beta, max_points, seed=config.seed)
        emit_metrics(result.record, directory)
        _show(f"ib-report ({split_name})", result.record)

    _guarded(body)


def main():
    app()


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""
cluster-fed-flow CLI

Subcommands:
    run         warm-up → similarity → clustering → clustered training → report
    baseline    FedAvg reference with the same sampling and local schedule
    partition   build the federation and save it as client CSVs
    similarity  warm-up and the fused proximity matrix only
    cluster     threshold sweep over a stored proximity matrix
    report      print the sweep table and the accuracy summary of a run

Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.
"""

import logging
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, Optional

import click

from .cli_utils import (
    print_error,
    print_header,
    print_info,
    print_step,
    print_success,
    print_table,
    print_warning,
    summary_line,
)
from .config.manager import load_config
from .config.schema import RunConfig
from .errors import ConfigError, DataFormatError, FederatedFlowError
from .metadata import SWEEP_COLUMNS, RunDirectory
from .pipeline import ExperimentPipeline
from .utils.helpers import setup_logging

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

PACKAGE_LOGGERS = (
    "ExperimentPipeline",
    "FederatedTrainer",
    "FedAvgReference",
    "Lifecycle",
    "ClusteringSweep",
    "CCGraphBuilder",
    "ProximityBuilder",
    "Partitioner",
    "FederationStore",
    "Evaluator",
    "RunDirectory",
    "ConfigManager",
)


def _overrides(seed: Optional[int], workers: Optional[int], out: Optional[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
    if workers is not None:
        overrides["workers"] = workers
    if out is not None:
        overrides["output"] = {"dir": out}
    return overrides


def _load(config_path: Optional[str], seed: Optional[int], workers: Optional[int], out: Optional[str]) -> RunConfig:
    if config_path is not None and not Path(config_path).exists():
        raise ConfigError(f"Configuration file not found: {config_path}")
    return load_config(config_path, _overrides(seed, workers, out))


def _fail(ctx: click.Context, error: Exception) -> None:
    """Print an error and exit with the code its type maps to"""
    if isinstance(error, (ConfigError, DataFormatError)):
        print_error(str(error))
        sys.exit(EXIT_USAGE)
    if isinstance(error, FederatedFlowError):
        print_error(str(error))
    else:
        print_error(f"Unexpected error: {error}")
    if ctx.obj.get("verbose"):
        traceback.print_exc()
    sys.exit(EXIT_RUNTIME)


config_option = click.option("--config", "config_path", default=None, help="JSON or YAML run configuration")
out_option = click.option("--out", default=None, help="Run directory (overrides output.dir)")
seed_option = click.option("--seed", type=int, default=None, help="Seed override")
workers_option = click.option("--workers", type=click.IntRange(1, 256), default=None, help="Worker threads")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Verbose output")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """
    Clustered federated learning simulator

    Warm-up signatures, fused proximity, threshold clustering and dual-encoder
    training with cross-cluster knowledge sharing.
    """
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    level = logging.DEBUG if verbose else logging.INFO
    logging.getLogger().setLevel(level)
    for name in PACKAGE_LOGGERS:
        setup_logging(name, level).setLevel(level)


def _run_kind(ctx: click.Context, kind: str, config_path, out, seed, workers) -> None:
    try:
        cfg = _load(config_path, seed, workers, out)
        summary = ExperimentPipeline(cfg).run(kind)
    except Exception as e:
        _fail(ctx, e)
        return
    for warning in summary["warnings"]:
        print_warning(warning)
    print_success(f"{kind}: {summary_line(dict(summary))}")
    print_info(f"📁 Output: {cfg.output.dir}/")


@cli.command()
@config_option
@out_option
@seed_option
@workers_option
@click.pass_context
def run(ctx: click.Context, config_path, out, seed, workers) -> None:
    """Full clustered training run"""
    _run_kind(ctx, "clustered", config_path, out, seed, workers)


@cli.command()
@config_option
@out_option
@seed_option
@workers_option
@click.pass_context
def baseline(ctx: click.Context, config_path, out, seed, workers) -> None:
    """FedAvg reference on the same federation and schedule"""
    _run_kind(ctx, "baseline", config_path, out, seed, workers)


@cli.command()
@config_option
@out_option
@seed_option
@click.pass_context
def partition(ctx: click.Context, config_path, out, seed) -> None:
    """Build the federation and save it as client CSVs"""
    try:
        cfg = _load(config_path, seed, None, out)
        target = ExperimentPipeline(cfg).partition()
    except Exception as e:
        _fail(ctx, e)
        return
    print_success(f"Federation saved to {target}/")


@cli.command()
@config_option
@out_option
@seed_option
@workers_option
@click.pass_context
def similarity(ctx: click.Context, config_path, out, seed, workers) -> None:
    """Warm-up, signatures and the fused proximity matrix"""
    try:
        cfg = _load(config_path, seed, workers, out)
        proximity = ExperimentPipeline(cfg).similarity()
    except Exception as e:
        _fail(ctx, e)
        return
    print_success(f"Proximity matrix for {proximity.N} clients written to {cfg.output.dir}/{RunDirectory.PROXIMITY}")


@cli.command()
@click.argument("proximity_csv", required=False)
@config_option
@out_option
@workers_option
@click.pass_context
def cluster(ctx: click.Context, proximity_csv: Optional[str], config_path, out, workers) -> None:
    """Threshold sweep over a proximity matrix CSV"""
    try:
        cfg = _load(config_path, None, workers, out)
        if proximity_csv is not None and not Path(proximity_csv).exists():
            raise DataFormatError(f"Proximity matrix not found: {proximity_csv}")
        sweep = ExperimentPipeline(cfg).cluster(proximity_csv)
    except Exception as e:
        _fail(ctx, e)
        return
    print_table(sweep.rows(), SWEEP_COLUMNS[:-1])
    print_success(f"Selected alpha*={sweep.alpha_star:g} with Z={sweep.selected.Z}")


def _print_section(step: str, title: str, rows, columns) -> None:
    print_step(step, title)
    print_table(rows, columns)


@cli.command()
@click.argument("run_dir")
@click.pass_context
def report(ctx: click.Context, run_dir: str) -> None:
    """Sweep table and accuracy summary of a finished run"""
    try:
        directory = RunDirectory(run_dir)
        manifest = directory.require_manifest()
        sweep = directory.read_sweep()
        metrics = directory.read_metrics() if directory.path(RunDirectory.METRICS).exists() else None
    except Exception as e:
        _fail(ctx, e)
        return

    print_header(f"Run report: {run_dir}")
    if sweep is not None:
        _print_section("sweep", "Threshold sweep", sweep.to_dict("records"), SWEEP_COLUMNS)
    if metrics is not None and not metrics.empty:
        evaluated = metrics.dropna(subset=["balanced_accuracy"])
        if not evaluated.empty:
            last = evaluated[evaluated["round"] == evaluated["round"].max()]
            per_cluster = (
                last.groupby("cluster_id")["balanced_accuracy"]
                .agg(["count", "mean"])
                .reset_index()
                .rename(columns={"count": "clients", "mean": "balanced_accuracy"})
            )
            _print_section("accuracy", "Final round by cluster", per_cluster.to_dict("records"), None)
    summary = manifest.get("summary")
    if summary:
        print_success(summary_line(summary))
    else:
        print_warning("Run has no summary yet")


def main() -> None:
    """Console entry point; click usage errors exit with code 2"""
    cli(obj={})


__all__ = ["cli", "main", "EXIT_OK", "EXIT_RUNTIME", "EXIT_USAGE"]


if __name__ == "__main__":
    main()

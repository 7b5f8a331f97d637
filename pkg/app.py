# app.py
"""Command-line entry point: `python app.py {cov-exp,chan-exp,rate-exp} ...`."""
import logging
import sys
from typing import Optional

import click
from pythonjsonlogger.json import JsonFormatter

from config import PRESETS, ExperimentConfig, build_config, parse_config, preset_config
from errors import ConfigError, GeometryError
from harness import EXPERIMENTS, KIND_CHANNEL, KIND_COVARIANCE, KIND_SUMRATE, emit_csv

logger = logging.getLogger("onebit")

# --- CONFIGURATION ---
EXIT_FAILED_CELLS = 1
EXIT_CONFIG_ERROR = 2
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str = "INFO", json_logs: bool = True) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def resolve_config(config_path: Optional[str], preset: Optional[str], seed: Optional[int], out: Optional[str]) -> ExperimentConfig:
    """Preset, then config file deep-merged over it, then command-line overrides."""
    if config_path is not None:
        cfg = parse_config(config_path, preset=preset)
    elif preset is not None:
        cfg = preset_config(preset)
    else:
        raise ConfigError("either --config or --preset is required")
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["output"] = out
    if overrides:
        cfg = build_config({**cfg.model_dump(), **overrides}, source="command line")
    if cfg.output is None:
        raise ConfigError("no output path: pass --out or set 'output' in the config", field="output")
    return cfg


def run_experiment(kind: str, config_path, preset, seed, out, workers, allow_partial, raw, progress) -> None:
    try:
        cfg = resolve_config(config_path, preset, seed, out)
    except ConfigError as e:
        logger.error("invalid configuration", extra={"error": str(e)})
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    try:
        result = EXPERIMENTS[kind](cfg, n_jobs=workers, progress=progress)
    except GeometryError as e:
        # the geometry spec itself cannot be normalized, no cell can run
        logger.error("invalid geometry", extra={"error": str(e)})
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    emit_csv(result, cfg.output, raw=raw)
    failures = result.failures()
    logger.info("results written", extra={"path": cfg.output, "records": len(result.records), "failures": len(failures)})
    if failures and not allow_partial:
        click.echo(f"{len(failures)} evaluations failed; rerun with --allow-partial to accept", err=True)
        sys.exit(EXIT_FAILED_CELLS)


def experiment_options(func):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="YAML experiment config (deep-merged over --preset when both are given)."),
        click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV output path."),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Master seed override."),
        click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Named base configuration."),
        click.option("--workers", type=int, default=1, show_default=True, help="Parallel worker processes."),
        click.option("--allow-partial", is_flag=True, help="Exit 0 even when some evaluations failed."),
        click.option("--raw", is_flag=True, help="Write one row per trial instead of the summary."),
        click.option("--progress/--no-progress", default=True, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--plain-logs", is_flag=True, help="Human-readable log lines instead of JSON.")
def cli(log_level: str, plain_logs: bool) -> None:
    """One-bit massive MIMO covariance, channel and sum-rate experiments."""
    configure_logging(log_level, json_logs=not plain_logs)


@cli.command("cov-exp")
@experiment_options
def cov_exp(**kwargs) -> None:
    """Normalized Frobenius error of channel covariance estimates."""
    run_experiment(KIND_COVARIANCE, **kwargs)


@cli.command("chan-exp")
@experiment_options
def chan_exp(**kwargs) -> None:
    """Normalized MSE of plug-in BLMMSE channel estimates."""
    run_experiment(KIND_CHANNEL, **kwargs)


@cli.command("rate-exp")
@experiment_options
def rate_exp(**kwargs) -> None:
    """Ergodic sum rate of MRC, ZF and BLMMSE receivers."""
    run_experiment(KIND_SUMRATE, **kwargs)


if __name__ == "__main__":
    cli()

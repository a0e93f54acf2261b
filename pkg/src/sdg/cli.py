"""Command-line entry points: generate, train, eval, serve.

Exit codes: 0 success, 1 configuration/input validation error,
2 runtime failure, 130 interrupted (checkpoint flushed; rerunning the
same config resumes from it).
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import (
    ConfigError,
    load_config_document,
    validate_config,
    validate_eval_config,
    validate_train_config,
)
from .errors import CancelledRun, SdgError
from .pipeline import run_eval, run_generate, run_train
from .progress import ConsoleSink

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_INTERRUPTED = 130


def _load_document(config_path: str):
    try:
        return load_config_document(config_path)
    except (OSError, ConfigError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


def _fail_config(err: ConfigError) -> None:
    click.echo(f"error: {err}", err=True)
    sys.exit(EXIT_CONFIG)


def _fail_runtime(err: BaseException) -> None:
    click.echo(f"error: {err}", err=True)
    sys.exit(EXIT_RUNTIME)


@click.group()
@click.option("--verbose", is_flag=True, default=False, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Configuration-driven synthetic instruction data engine."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("config_path", type=click.Path())
def generate(config_path: str) -> None:
    """Run a synthesis job described by CONFIG_PATH."""
    try:
        config = validate_config(_load_document(config_path))
    except ConfigError as err:
        _fail_config(err)
    sink = ConsoleSink()
    try:
        result = run_generate(config, sink=sink)
    except CancelledRun:
        click.echo("interrupted; checkpoint flushed, rerun to resume", err=True)
        sys.exit(EXIT_INTERRUPTED)
    except (SdgError, Exception) as err:  # noqa: BLE001 - boundary maps to exit code
        _fail_runtime(err)
    usage = result.usage
    click.echo(
        f"wrote {len(result.samples)} samples to {result.output_path} "
        f"in {result.wall_time_s:.1f}s "
        f"(llm calls: {usage['calls']}, prompt tokens: {usage['tokens_prompt']}, "
        f"completion tokens: {usage['tokens_completion']})"
    )
    if result.quality_report is not None:
        counts = result.quality_report.counts
        click.echo(
            f"quality: solved={counts['solved']} learnable={counts['learnable']} "
            f"unsolved={counts['unsolved']} "
            f"rewrites applied={result.quality_report.rewrites_applied} "
            f"rejected={result.quality_report.rewrites_rejected}"
        )
    sys.exit(EXIT_OK)


@main.command()
@click.argument("config_path", type=click.Path())
def train(config_path: str) -> None:
    """Export the dataset named by CONFIG_PATH and invoke the trainer."""
    try:
        config = validate_train_config(_load_document(config_path))
        if not Path(config.data).exists():
            raise ConfigError.from_message("data", f"dataset {config.data!r} does not exist")
    except ConfigError as err:
        _fail_config(err)
    try:
        result = run_train(config, sink=ConsoleSink())
    except CancelledRun:
        sys.exit(EXIT_INTERRUPTED)
    except Exception as err:  # noqa: BLE001
        _fail_runtime(err)
    click.echo(
        f"exported {result.export.count} pairs to {result.export.path} "
        f"({result.export.method}); trainer exit status {result.exit_status}"
    )
    sys.exit(EXIT_OK)


@main.command(name="eval")
@click.argument("config_path", type=click.Path())
def eval_cmd(config_path: str) -> None:
    """Evaluate a model per CONFIG_PATH and write eval_report.json."""
    try:
        config = validate_eval_config(_load_document(config_path))
        if not Path(config.dataset).exists():
            raise ConfigError.from_message(
                "dataset", f"dataset {config.dataset!r} does not exist"
            )
    except ConfigError as err:
        _fail_config(err)
    try:
        report_path = run_eval(config, sink=ConsoleSink())
    except CancelledRun:
        sys.exit(EXIT_INTERRUPTED)
    except Exception as err:  # noqa: BLE001
        _fail_runtime(err)
    click.echo(f"wrote {report_path}")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--data-dir",
    default="sdg_data",
    show_default=True,
    type=click.Path(),
    help="Directory for job records, events, and outputs.",
)
@click.option(
    "--ui-dir",
    default=None,
    type=click.Path(),
    help="Static frontend assets to serve at /.",
)
def serve(port: int, host: str, data_dir: str, ui_dir: str | None) -> None:
    """Start the HTTP job service (and optional static UI)."""
    import uvicorn

    from .service import create_app

    app = create_app(data_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()

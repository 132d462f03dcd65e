"""Actions for the CLI."""
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
from rich import print, print_json
from rich.console import Console
from rich.table import Table
from rich.traceback import Traceback

import tontine_flow
from tontine_flow import errors
from tontine_flow.config import RunConfig, load_config, validate_scenario
from tontine_flow.flows import MANIFEST_NAME, run
from tontine_flow.helpers import dumps
from tontine_flow.pipeline import PipelineContext

log = logging.getLogger(__package__)

#: Exit code for configuration and input file errors.
CONFIG_ERROR = 2


def _emit_error(ex: BaseException):
    """Machine readable error on stderr."""
    sys.stderr.write(json.dumps(errors.error_payload(ex), sort_keys=True) + "\n")


def _exit_code(ex: BaseException) -> int:
    if isinstance(ex, (errors.ConfigurationError, errors.ParseError)):
        return CONFIG_ERROR
    return 1


def _load(config_path: Path, seed_override: Optional[int]) -> RunConfig:
    return load_config(config_path).with_seed_override(seed_override)


def validate_config(config_path: Path, seed_override: Optional[int]):
    """Validate a configuration and print the resolved scenario."""
    try:
        config = _load(config_path, seed_override)
        report = validate_scenario(config)
    except errors.TontineFlowError as ex:
        _emit_error(ex)
        return _exit_code(ex)

    print_json(dumps(report))


def run_stages(
    config_path: Path,
    stages: Optional[Sequence[str]],
    seed_override: Optional[int],
    out: Optional[Path],
    full_trace: bool,
):
    """Run pipeline stages for a configuration."""
    try:
        config = _load(config_path, seed_override)
    except errors.TontineFlowError as ex:
        _emit_error(ex)
        return _exit_code(ex)

    context = PipelineContext()
    try:
        run(config, stages, out, context)

    except errors.TontineFlowError as ex:
        if context.flow_trace:
            Console(stderr=True).print(context.flow_trace)
        _emit_error(ex)
        return _exit_code(ex)

    except Exception as ex:
        console = Console(stderr=True)
        if context.flow_trace:
            console.print(context.flow_trace)
        console.print(
            Traceback(
                suppress=() if full_trace else [tontine_flow],
                show_locals=full_trace,
            )
        )
        _emit_error(ex)
        return 1


def _frame_table(title: str, frame: pd.DataFrame) -> Table:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), justify="right")
    for row in frame.itertuples(index=False):
        table.add_row(*(f"{value:.4g}" if isinstance(value, float) else str(value) for value in row))
    return table


def report_run(out: Path):
    """Summarise the manifest, frontier and guarantee quote of a run."""
    manifest_path = out / MANIFEST_NAME
    if not manifest_path.is_file():
        log.error("No manifest found at %s", manifest_path)
        return 13

    manifest = json.loads(manifest_path.read_text())
    print(
        f"Run [bold]{manifest['status']}[/bold]; "
        f"completed: {', '.join(manifest['completed']) or 'none'}"
    )
    if manifest["resume_stages"]:
        print(f"Resume with: --stage {' --stage '.join(manifest['resume_stages'])}")

    artifacts = Table(title="Artifacts")
    artifacts.add_column("Path")
    artifacts.add_column("Stage")
    artifacts.add_column("SHA-256")
    for artifact in manifest["artifacts"]:
        artifacts.add_row(artifact["path"], artifact["stage"], artifact["sha256"][:12])
    print(artifacts)

    frontier_path = out / "frontier.csv"
    if frontier_path.is_file():
        print(_frame_table("Frontier", pd.read_csv(frontier_path)))

    quote_path = out / "mbg" / "quote.json"
    if quote_path.is_file():
        quote = json.loads(quote_path.read_text())
        table = Table(title="Money-back guarantee")
        table.add_column("Quantity")
        table.add_column("Value", justify="right")
        for key in ("e_hat", "cvar_hat", "var_hat", "f_hat", "post_load_bps", "trigger_rate"):
            table.add_row(key, f"{quote[key]:.4f}")
        print(table)

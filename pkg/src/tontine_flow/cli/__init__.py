"""CLI entry point."""
from importlib import metadata
from pathlib import Path
from typing import Optional

from pyapp.app import Arg, CliApplication, CommandOptions, argument

app = CliApplication(
    description="Tontine decumulation optimiser",
    version=metadata.version("tontine-flow"),
    env_loglevel_key="TONTINE_FLOW_LOGLEVEL",
    env_settings_key="TONTINE_FLOW_SETTINGS",
)
main = app.dispatch


def run_arguments(func):
    """Arguments shared by every command that executes pipeline stages."""
    for decorator in (
        argument(
            "--full-trace",
            action="store_true",
            help_text="Show full trace on error.",
        ),
        argument(
            "--out",
            type=Path,
            default=None,
            help_text="Output directory; overrides output_dir in the config",
        ),
        argument(
            "--seed-override",
            type=int,
            default=None,
            help_text="Replace the train/eval/price seeds with S, S+1 and S+2",
        ),
        argument(
            "-c",
            "--config",
            type=Path,
            required=True,
            help_text="Run configuration (JSON)",
        ),
    ):
        func = decorator(func)
    return func


def _run(opts: CommandOptions, stages) -> Optional[int]:
    from .actions import run_stages

    return run_stages(opts.config, stages, opts.seed_override, opts.out, opts.full_trace)


@app.command
@argument(
    "-c",
    "--config",
    type=Path,
    required=True,
    help_text="Run configuration (JSON)",
)
@argument(
    "--seed-override",
    type=int,
    default=None,
    help_text="Replace the train/eval/price seeds with S, S+1 and S+2",
)
def validate(opts: CommandOptions) -> Optional[int]:
    """Validate a configuration and echo the resolved scenario."""
    from .actions import validate_config

    return validate_config(opts.config, opts.seed_override)


@app.command
@run_arguments
@argument(
    "--stage",
    action="append",
    default=None,
    help_text="Stage(s) to run (simulate, train, frontier, eval, price); default all",
)
def run(opts: CommandOptions) -> Optional[int]:
    """Run pipeline stages."""
    return _run(opts, opts.stage)


@app.command
@run_arguments
def simulate(opts: CommandOptions) -> Optional[int]:
    """Simulate training, evaluation and pricing paths."""
    return _run(opts, ["simulate"])


@app.command
@run_arguments
def train(opts: CommandOptions) -> Optional[int]:
    """Train withdrawal and allocation controls."""
    return _run(opts, ["train"])


@app.command
@run_arguments
def frontier(opts: CommandOptions) -> Optional[int]:
    """Train one policy per gamma and tabulate the efficient frontier."""
    return _run(opts, ["frontier"])


@app.command(name="eval")
@run_arguments
def evaluate(opts: CommandOptions) -> Optional[int]:
    """Evaluate the trained policy against constant-weight benchmarks."""
    return _run(opts, ["eval"])


@app.command
@run_arguments
def price(opts: CommandOptions) -> Optional[int]:
    """Price the money-back guarantee under the trained policy."""
    return _run(opts, ["price"])


@app.command
def report(
    *,
    out: Path = Arg(
        "-o",
        "--out",
        default=Path("./out"),
        help="Output directory of a previous run; default is ./out",
    ),
) -> Optional[int]:
    """Summarise the artifacts of a previous run."""
    from .actions import report_run

    return report_run(out)

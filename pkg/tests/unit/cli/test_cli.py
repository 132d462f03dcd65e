from pathlib import Path

from unittest.mock import patch

import pytest

from tontine_flow import cli


@pytest.mark.parametrize(
    "args, expected",
    (
        (
            ["run", "-c", "run.json"],
            (Path("run.json"), None, None, None, False),
        ),
        (
            ["run", "-c", "run.json", "--stage", "train", "--stage", "eval"],
            (Path("run.json"), ["train", "eval"], None, None, False),
        ),
        (
            ["run", "--config", "run.json", "--seed-override", "7", "--out", "/tmp/out"],
            (Path("run.json"), None, 7, Path("/tmp/out"), False),
        ),
        (
            ["run", "-c", "run.json", "--full-trace"],
            (Path("run.json"), None, None, None, True),
        ),
        (
            ["simulate", "-c", "run.json"],
            (Path("run.json"), ["simulate"], None, None, False),
        ),
        (
            ["frontier", "-c", "run.json"],
            (Path("run.json"), ["frontier"], None, None, False),
        ),
        (
            ["eval", "-c", "run.json"],
            (Path("run.json"), ["eval"], None, None, False),
        ),
        (
            ["price", "-c", "run.json", "--seed-override", "3"],
            (Path("run.json"), ["price"], 3, None, False),
        ),
    ),
)
@patch("tontine_flow.cli.actions.run_stages", return_value=None)
def test_run_commands(mock_run_stages, args, expected):
    cli.main(args)

    mock_run_stages.assert_called_once_with(*expected)


@patch("tontine_flow.cli.actions.validate_config", return_value=None)
def test_validate(mock_validate_config):
    cli.main(["validate", "-c", "run.json", "--seed-override", "5"])

    mock_validate_config.assert_called_once_with(Path("run.json"), 5)


@patch("tontine_flow.cli.actions.report_run", return_value=None)
def test_report(mock_report_run):
    cli.main(["report", "--out", "results"])

    mock_report_run.assert_called_once_with(Path("results"))

import pytest

from tontine_flow import errors


@pytest.mark.parametrize(
    "error, expected",
    (
        (
            errors.ConfigurationError("must be positive", field="scenario.W0"),
            {
                "error": "ConfigurationError",
                "message": "scenario.W0: must be positive",
                "field": "scenario.W0",
            },
        ),
        (
            errors.ParseError("bad number", source="q.csv", line=3),
            {
                "error": "ParseError",
                "message": "q.csv:3: bad number",
                "source": "q.csv",
                "line": 3,
            },
        ),
        (
            errors.TableRangeError(101, 2050),
            {
                "error": "TableRangeError",
                "message": "Life table has no entry for (age=101, year=2050)",
                "cell": [101, 2050],
            },
        ),
        (
            errors.SimulationError("Non-finite return", path=4, period=2),
            {
                "error": "SimulationError",
                "message": "Non-finite return (path=4, period=2)",
                "path": 4,
                "period": 2,
            },
        ),
        (
            errors.GradientError("theta_p"),
            {
                "error": "GradientError",
                "message": "Non-finite gradient in parameter block 'theta_p'",
                "block": "theta_p",
            },
        ),
        (
            errors.TrainingError("Non-finite objective", iteration=12),
            {
                "error": "TrainingError",
                "message": "Non-finite objective at iteration 12",
                "iteration": 12,
            },
        ),
        (
            KeyError("eek"),
            {"error": "KeyError", "message": "'eek'"},
        ),
    ),
)
def test_error_payload(error, expected):
    actual = errors.error_payload(error)

    assert actual == expected


def test_configuration_error__without_field():
    actual = errors.ConfigurationError("Configuration must be a JSON object")

    assert str(actual) == "Configuration must be a JSON object"
    assert actual.field is None


def test_stage_failed_error__is_runtime_error():
    actual = errors.StageFailedError("boom", stage="train")

    assert isinstance(actual, errors.PipelineRuntimeError)
    assert isinstance(actual, errors.TontineFlowError)
    assert actual.stage == "train"

from typing import Any, List
from unittest.mock import ANY

import pytest

from tontine_flow import errors
from tontine_flow.pipeline import (
    CaptureErrors,
    ForEach,
    Group,
    LogMessage,
    Pipeline,
    PipelineContext,
    SetVar,
    Switch,
    stage,
)


@stage(output="arg_t")
def add_args(arg_1: int, arg_2: int) -> int:
    return arg_1 + arg_2


def add_message(msg: str):
    @stage
    def message(context: PipelineContext, messages: List[str]):
        messages.append(context.format(msg))

    return message


def raise_error(exception):
    @stage
    def error():
        raise exception

    return error


basic_group = Group(add_args, add_message("foo"))


class TestGroup:
    def test_str(self):
        assert str(basic_group) == "🔽 Group"

    def test_branches(self):
        actual = basic_group.branches()

        assert actual == {"": [ANY, ANY]}


sub_pipeline = Pipeline(name="Sub Pipeline").nodes(
    add_message("sub_pipeline"),
)


sample_pipeline = (
    Pipeline(name="Sample Pipeline")
    .require_vars(arg_3=int, arg_4=Any)
    .nodes(
        SetVar(messages=lambda ctx: [], arg_1=13, arg_2=42),
        add_args,
        add_message("single"),
        add_message("{arg_t:03d}"),
        sub_pipeline,
        CaptureErrors("errors", try_all=True).nodes(
            raise_error(ValueError("Error A")),
            raise_error(ValueError("Error B")),
        ),
        ForEach("error", in_var="errors").loop(
            LogMessage("{error}"), add_message("{error}")
        ),
        Switch("arg_1")
        .case(13, add_message("it's 13"))
        .case(42, add_message("it's 42")),
    )
)


class TestPipeline:
    def test_execute(self):
        actual = sample_pipeline.execute(arg_3=69, arg_4="hello")

        assert actual.state["messages"] == [
            "single",
            "055",
            "sub_pipeline",
            "Error A",
            "Error B",
            "it's 13",
        ]

    def test_execute__with_existing_context(self):
        context = PipelineContext(arg_3=1)

        actual = sample_pipeline.execute(context, arg_4=None)

        assert actual is context
        assert actual.state.arg_t == 55

    def test_execute__where_required_var_is_not_defined(self):
        with pytest.raises(errors.MissingVariableError):
            sample_pipeline.execute(arg_4="hello")

    def test_execute__where_required_var_is_incorrect_type(self):
        with pytest.raises(errors.VariableTypeError):
            sample_pipeline.execute(arg_3="not an int", arg_4="hello")

    def test_execute__where_stage_fails_trace_is_captured(self):
        target = Pipeline("Failing").nodes(
            SetVar(var_a=1),
            raise_error(errors.StageFailedError("Boom", stage="train")),
        )

        context = PipelineContext()
        with pytest.raises(errors.StageFailedError):
            target.execute(context)

        assert context.flow_trace is not None

    def test_call__nested_pipeline_has_own_scope(self):
        inner = Pipeline("Inner").nodes(SetVar(var_b=2))
        outer = Pipeline("Outer").nodes(inner)

        context = outer.execute()

        assert "var_b" not in context.state

    def test_str(self):
        assert str(sub_pipeline) == "Sub Pipeline"

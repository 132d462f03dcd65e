from __future__ import annotations

from tontine_flow import flows, testing
from tontine_flow.config import parse_config
from tontine_flow.market import KouMarket
from tontine_flow.pipeline import PipelineContext, stage


@stage(output="annual_charge")
def lookup_charge(*, preset: str) -> None | float:
    """
    Mock stage that returns the annual charge of a known preset
    """
    return {
        "validation": 0.005,
        "diversified": 0.0011,
    }.get(preset)


def test_call_stage__where_value_is_returned():
    context = testing.call_stage(lookup_charge, preset="validation")

    assert isinstance(context, PipelineContext)
    assert context.state["preset"] == "validation"
    assert context.state["annual_charge"] == 0.005


def test_call_stage__where_none_is_returned():
    context = testing.call_stage(lookup_charge, preset="custom")

    assert isinstance(context, PipelineContext)
    assert context.state["preset"] == "custom"
    assert context.state["annual_charge"] is None


def test_call_stage__with_existing_context():
    context = PipelineContext(preset="diversified")

    actual = testing.call_stage(lookup_charge, pipeline_context=context)

    assert actual is context
    assert context.state["annual_charge"] == 0.0011


def test_call_stage__with_run_config():
    run_config = parse_config({"mortality": {"kind": "none"}})

    context = testing.call_stage(flows.kou_market, run_config=run_config)
    testing.call_stage(flows.mortality_models, pipeline_context=context)

    assert isinstance(context.state.market_model, KouMarket)
    assert context.state.mortality_model is None

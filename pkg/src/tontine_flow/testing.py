"""Helper methods for testing pipeline stages."""
from typing import Any, Callable

from .pipeline import PipelineContext, call_node


def call_stage(
    node: Callable[[PipelineContext], Any],
    *,
    pipeline_context: PipelineContext = None,
    **context_vars: Any,
) -> PipelineContext:
    """Call a single node with the supplied context variables.

    Returns the context so results can be asserted on.

    .. code-block:: python

        def test_kou_market(run_config):
            context = call_stage(flows.kou_market, run_config=run_config)

            assert isinstance(context.state.market_model, KouMarket)

    """
    if pipeline_context:
        pipeline_context.state.update(context_vars)
    else:
        pipeline_context = PipelineContext(**context_vars)
    call_node(pipeline_context, node)
    return pipeline_context

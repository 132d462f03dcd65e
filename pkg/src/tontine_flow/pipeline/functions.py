"""Introspection and dispatch helpers shared by pipeline nodes."""
import inspect
from typing import Any, Callable, Mapping, Sequence, Tuple, Union, get_args, get_origin

from ..errors import (
    MissingVariableError,
    PipelineSetupError,
    SkipStage,
    VariableTypeError,
)
from ..helpers import human_join_strings
from .context import PipelineContext

_SKIPPED_KINDS = (inspect.Parameter.VAR_POSITIONAL, inspect.Parameter.VAR_KEYWORD)


def var_list(var_names: Union[str, Sequence[str]]) -> Sequence[str]:
    """Split a comma separated list of var names into individual names."""
    if isinstance(var_names, str):
        var_names = var_names.split(",")
    return [name.strip() for name in var_names]


def _is_context(annotation) -> bool:
    return annotation is PipelineContext or annotation == "PipelineContext"


def extract_inputs(func: Callable) -> Tuple[Mapping[str, type], str]:
    """Context variables a stage function reads, and the name of the
    argument (if any) that receives the :class:`PipelineContext`."""
    name = getattr(func, "__name__", type(func).__name__)
    inputs = {}
    context_var = None
    for param in inspect.signature(func).parameters.values():
        if param.kind is inspect.Parameter.POSITIONAL_ONLY:
            raise PipelineSetupError(
                f"Positional only arguments are not supported.\n\n\tdef {name}(...)"
            )
        if param.kind in _SKIPPED_KINDS:
            continue

        annotation = None if param.annotation is inspect.Parameter.empty else param.annotation
        if _is_context(annotation):
            if context_var is not None:
                raise PipelineSetupError(
                    "PipelineContext supplied multiple times.\n\n"
                    f"\tdef {name}({context_var}, {param.name})"
                )
            context_var = param.name
        else:
            inputs[param.name] = annotation

    return inputs, context_var


def call_node(context: PipelineContext, node: Callable):
    """Call a single node, capturing the pipeline trace on failure."""
    context.trace(node)
    try:
        node(context)
    except SkipStage:
        raise
    except Exception:
        context.capture_trace()
        raise


def call_nodes(context: PipelineContext, nodes: Sequence[Callable]):
    for node in nodes:
        call_node(context, node)


def matches_type(value: Any, var_type) -> bool:
    """``isinstance`` that accepts ``Any``, ``Optional``/``Union`` and
    subscripted generics such as ``FrozenSet[str]``."""
    if var_type is Any or var_type is None:
        return True
    origin = get_origin(var_type)
    if origin is Union:
        return any(matches_type(value, arg) for arg in get_args(var_type))
    if var_type is type(None):
        return value is None
    return isinstance(value, origin or var_type)


def required_variables_in_context(
    node_name: str,
    required_vars: Sequence[Tuple[str, type]],
    context: PipelineContext,
):
    """Check all variables are in the context with the expected types."""
    missing = []
    invalid_types = []

    for var_name, var_type in required_vars:
        try:
            value = context.state[var_name]
        except KeyError:
            missing.append(var_name)
        else:
            if not matches_type(value, var_type):
                invalid_types.append(var_name)

    if missing:
        raise MissingVariableError(
            f"{node_name} missing {len(missing)} required context variable: "
            f"{human_join_strings(missing)}"
        )

    if invalid_types:
        raise VariableTypeError(
            f"{node_name} has {len(invalid_types)} context variable(s) with invalid types: "
            f"{human_join_strings(invalid_types)}"
        )

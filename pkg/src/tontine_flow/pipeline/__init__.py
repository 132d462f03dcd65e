"""Stage/pipeline engine used to orchestrate runs."""
from .context import Artifact, Navigable, PipelineContext, State
from .functions import call_node, call_nodes, extract_inputs, var_list
from .nodes import (
    CaptureErrors,
    DefaultVar,
    ForEach,
    Group,
    LogMessage,
    Node,
    Pipeline,
    SetVar,
    Stage,
    Switch,
    stage,
)

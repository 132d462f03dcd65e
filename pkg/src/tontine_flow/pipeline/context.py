from __future__ import annotations

import abc
import logging
from collections import deque
from pathlib import Path
from typing import Any, Dict, Final, Iterable, List, Optional, Sequence, Tuple, Union

from ..helpers import digest_file

Branches = Dict[str, Sequence["Navigable"]]
TRACE_STATE_KEY: Final[str] = "__trace"


class Navigable(abc.ABC):
    """ABC for objects that can be navigated.

    Used to map out the pipeline tree."""

    @property
    @abc.abstractmethod
    def name(self) -> str:
        """Name of object"""

    def branches(self) -> Optional[Branches]:
        """Branches from an object in the pipeline node tree."""

    def __str__(self):
        return self.name


class State(Dict[str, Any]):
    """Wrapper around dict to support attribute accessors."""

    def __getattr__(self, var: str) -> Any:
        try:
            return self[var]
        except KeyError:
            raise AttributeError(f"State has no attribute {var!r}") from None

    def __setattr__(self, var: str, value: Any):
        self[var] = value

    def __delattr__(self, var: str):
        try:
            del self[var]
        except KeyError:
            raise AttributeError(f"State has no attribute {var!r}") from None

    def __rich__(self):
        from rich.scope import render_scope

        visible = {k: v for k, v in self.items() if k != TRACE_STATE_KEY}
        return render_scope(visible, title="State Variables", sort_keys=True)

    def copy(self) -> "State":
        return State((k, v) for k, v in self.items())


class TraceScope(List[Navigable]):
    """Nodes visited in the current scope."""

    def __rich__(self):
        from rich.console import Group

        return Group(
            *(f"[blue]{idx}[/blue]: [green]{node.name}\n" for idx, node in enumerate(self))
        )


class FlowTrace(List[State]):
    """Trace of the visited pipeline tree, captured when a stage fails."""

    def __rich__(self):
        from rich.console import Group
        from rich.padding import Padding
        from rich.panel import Panel

        panels = []
        for idx, (trace_scope, state_vars) in enumerate(self.iter_trace()):
            panels.append(Padding.indent(Group(state_vars, trace_scope), 2 * idx))

        return Panel(
            Group(*panels),
            title="[traceback.title]Pipeline trace [dim](most recent stage last)",
            border_style="traceback.border",
            expand=True,
            width=100,
            padding=(0, 1),
        )

    def iter_trace(self) -> Iterable[Tuple[TraceScope, State]]:
        for state in self:
            trace_scope = state.get(TRACE_STATE_KEY, TraceScope())
            yield trace_scope, State((k, v) for k, v in state.items() if k != TRACE_STATE_KEY)


class Artifact:
    """A file produced by a stage."""

    __slots__ = ("path", "stage", "sha256")

    def __init__(self, path: Path, stage: str):
        self.path = Path(path)
        self.stage = stage
        self.sha256 = digest_file(self.path)

    def as_dict(self, root: Path = None) -> Dict[str, str]:
        path = self.path
        if root is not None:
            try:
                path = path.relative_to(root)
            except ValueError:
                pass
        return {"path": path.as_posix(), "stage": self.stage, "sha256": self.sha256}


class PipelineContext:
    """Current context of a pipeline run.

    Variables live in ``state``; entering the context (``with context:``)
    pushes a copy of the state so changes are discarded on exit. Artifacts
    registered with :meth:`add_artifact` are shared by every scope and are
    used to build the run manifest.

    :param logger: Optional logger; ``tontine_flow.pipeline`` if not provided.
    :param variables: Initial state of variables.

    .. code-block:: python

        context = PipelineContext(out_dir=Path("out"))

        with context:
            context.state.paths = simulate(...)

        assert "paths" not in context.state

    """

    __slots__ = ("state", "_state_vector", "logger", "artifacts", "_flow_trace", "_stage")

    def __init__(self, logger: logging.Logger = None, **variables):
        variables[TRACE_STATE_KEY] = TraceScope()
        self.state = State(variables)
        self._state_vector = deque([self.state])
        self.logger = logger or logging.getLogger("tontine_flow.pipeline")
        self.artifacts: Dict[str, Artifact] = {}
        self._flow_trace: Optional[FlowTrace] = None
        self._stage: Optional[str] = None

    def __enter__(self):
        self.push_state()

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.pop_state()

    def push_state(self):
        """Clone the current state so changes don't affect the outer scope."""
        self.state = State(self.state)
        self.state[TRACE_STATE_KEY] = TraceScope()
        self._state_vector.append(self.state)

    def pop_state(self):
        self._state_vector.pop()
        self.state = self._state_vector[-1]

    @property
    def depth(self) -> int:
        return len(self._state_vector)

    @property
    def indent(self) -> str:
        return "  " * self.depth

    # Artifacts ###############################################################

    @property
    def current_stage(self) -> Optional[str]:
        return self._stage

    def enter_stage(self, name: Optional[str]):
        self._stage = name

    def add_artifact(self, path: Union[str, Path]) -> Path:
        """Register a produced file; its content hash is taken immediately."""
        artifact = Artifact(Path(path), self._stage or "")
        self.artifacts[artifact.path.as_posix()] = artifact
        self.debug("💾 %s", artifact.path)
        return artifact.path

    # Tracing #################################################################

    @property
    def flow_trace(self) -> Optional[FlowTrace]:
        return self._flow_trace

    def capture_trace(self, *, force: bool = False):
        """Capture the scopes visited when an exception was raised."""
        if not self._flow_trace or force:
            self._flow_trace = FlowTrace(scope.copy() for scope in self._state_vector)

    def trace(self, node: Navigable):
        self.state[TRACE_STATE_KEY].append(node)

    # Logging #################################################################

    def log(self, level: int, msg: str, *args, **kwargs):
        """Log a message indented by the current scope depth."""
        self.logger.log(level, f"{self.indent}{msg}", *args, **kwargs)

    def debug(self, msg, *args):
        self.log(logging.DEBUG, msg, *args)

    def info(self, msg, *args):
        self.log(logging.INFO, msg, *args)

    def warning(self, msg, *args):
        self.log(logging.WARNING, msg, *args)

    def error(self, msg, *args):
        self.log(logging.ERROR, msg, *args)

    def format(self, message: str) -> str:
        """Format a message using context variables."""
        try:
            return message.format(**self.state)
        except Exception as ex:
            self.log(logging.WARNING, "Exception formatting message %r: %s", message, ex)
            return message

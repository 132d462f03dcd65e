import logging
from typing import Any, Callable, Dict, Hashable, Iterable, Optional, Sequence, Type, Union

from typing_extensions import Self

from ..errors import FatalError, PipelineRuntimeError, SkipStage
from ..helpers import change_log_level
from .context import Branches, Navigable, PipelineContext
from .functions import (
    call_node,
    call_nodes,
    extract_inputs,
    required_variables_in_context,
    var_list,
)

Node = Callable[[PipelineContext], Any]


class Stage(Navigable):
    """
    Wrapper around a function that defines a pipeline stage.

    Keyword arguments are read from ``PipelineContext.state`` and the return
    value is written back under the name(s) given by ``output``.

    >>> @stage(output="train_paths")
    >>> def simulate_train_paths(run_config: RunConfig) -> PathSet:
    >>>     ...

    To get access to the context include an argument typed
    ``PipelineContext``.

    :param func: Callable function or lambda
    :param name: Optional name of the stage (defaults to the function name)
    :param output: Name, comma separated names or sequence of names for the
        value(s) returned by the function.
    """

    __slots__ = ("func", "inputs", "outputs", "_name", "ignore_exceptions", "context_var")

    def __init__(
        self,
        func: Callable,
        name: str = None,
        output: Union[str, Sequence[str]] = None,
        ignore_exceptions: Union[Type[Exception], Sequence[Type[Exception]]] = None,
    ):
        self.func = func
        self._name = name or func.__name__.replace("_", " ").title()
        self.ignore_exceptions = (
            tuple(ignore_exceptions)
            if isinstance(ignore_exceptions, (list, tuple))
            else ignore_exceptions
        )
        self.inputs, self.context_var = extract_inputs(func)
        self.outputs = tuple(var_list(output)) if output else ()

    def __call__(self, context: PipelineContext) -> Any:
        state = context.state
        kwargs = {name: state[name] for name in self.inputs if name in state}
        if self.context_var:
            kwargs[self.context_var] = context

        name = context.format(self.name)
        context.info("🔹Stage `%s`", name)
        previous = context.current_stage
        context.enter_stage(name)
        try:
            results = self.func(**kwargs)

        except SkipStage as ex:
            context.warning(" 🔃 Skipping stage: %s", ex)

        except FatalError as ex:
            context.error("  ⛔ Fatal error raised: %s", ex)
            raise

        except Exception as ex:
            if self.ignore_exceptions and isinstance(ex, self.ignore_exceptions):
                context.warning("  ❌ Ignoring exception: %s", ex)
            else:
                context.error("  ⛔ Exception raised: %s", ex)
                raise

        else:
            if self.outputs:
                values = (results,) if len(self.outputs) == 1 else results
                for output, value in zip(self.outputs, values):
                    context.state[output] = value
            return results

        finally:
            context.enter_stage(previous)

    @property
    def name(self) -> str:
        return self._name


def stage(
    func=None,
    *,
    name: str = None,
    output: Union[str, Sequence[str]] = None,
    ignore_exceptions: Union[Type[Exception], Sequence[Type[Exception]]] = None,
) -> Union[Callable[[Callable], Stage], Stage]:
    """Decorate a function turning it into a stage."""

    def decorator(func_) -> Stage:
        return Stage(func_, name, output, ignore_exceptions)

    return decorator(func) if func else decorator


class Group(Navigable):
    """Group of nodes sharing the enclosing scope."""

    __slots__ = ("_nodes", "_finally_nodes", "_log_level")

    def __init__(self, *nodes_: Node, log_level: Union[str, int, None] = None):
        self._nodes = list(nodes_)
        self._finally_nodes = ()
        self._log_level = log_level

    def __call__(self, context: PipelineContext):
        self._execute(context)

    @property
    def name(self) -> str:
        return f"🔽 {type(self).__name__}"

    def and_finally(self, *nodes) -> Self:
        """Nodes that are always called even if an exception is raised."""
        self._finally_nodes = nodes
        return self

    def branches(self) -> Optional[Branches]:
        return {"": [*self._nodes, *self._finally_nodes]}

    def _execute(self, context: PipelineContext):
        with change_log_level(self._log_level):
            try:
                call_nodes(context, self._nodes)
            finally:
                if self._finally_nodes:
                    call_nodes(context, self._finally_nodes)


class Pipeline(Group):
    """A named sequence of nodes run in its own scope.

    :param name: The name of the pipeline
    :param description: Optional description of the pipeline.
    """

    __slots__ = ("_name", "description", "_required_vars")

    def __init__(self, name: str, description: str | None = None):
        super().__init__()
        self._name = name
        self.description = description
        self._required_vars = ()

    def __call__(self, context: PipelineContext):
        context.info("⏩ Pipeline: `%s`", context.format(self._name))
        with context:
            required_variables_in_context(self.name, self._required_vars, context)
            self._execute(context)

    @property
    def name(self):
        return self._name

    def execute(self, context: PipelineContext = None, **context_vars) -> PipelineContext:
        """Execute the pipeline.

        :param context: Optional context; a new one is created if not supplied.
        :param context_vars: Key/Value pairs to initialise the context with.
        :return: The context used to execute the pipeline.
        """
        context = context or PipelineContext()
        context.state.update(context_vars)
        context.info("⏩ Pipeline: `%s`", self._name)
        required_variables_in_context(self.name, self._required_vars, context)
        self._execute(context)
        return context

    def nodes(self, *nodes_: Node) -> Self:
        self._nodes.extend(nodes_)
        return self

    def require_vars(self, **kwargs: Optional[Type]) -> Self:
        """Require variables (name=type) to be present in the context."""
        self._required_vars = tuple(kwargs.items())
        return self


class SetVar(Navigable):
    """Set context variables to values, or to the result of a callable
    taking the context."""

    __slots__ = ("values",)

    def __init__(self, **values: Union[Any, Callable[[PipelineContext], Any]]):
        self.values = values

    def __call__(self, context: PipelineContext):
        context.info("📝 %s", self)
        context.state.update(
            (key, value(context) if callable(value) else value)
            for key, value in self.values.items()
        )

    @property
    def name(self):
        return f"Set value(s) for {', '.join(self.values)}"


class DefaultVar(SetVar):
    """Set context variables only if they are not already defined."""

    __slots__ = ()

    def __call__(self, context: PipelineContext):
        context.info("📝 %s", self)
        context.state.update(
            [
                (key, value(context) if callable(value) else value)
                for key, value in self.values.items()
                if key not in context.state
            ]
        )

    @property
    def name(self):
        return f"Default value(s) for {', '.join(self.values)}"


class Switch(Navigable):
    """Run one of several branches chosen by a context variable (or a
    callable returning a hashable key).

    .. code-block:: python

        (
            Switch(lambda ctx: ctx.state.run_config.market.kind)
            .case("kou", simulate_kou_paths)
            .case("bootstrap", load_panel_stage, bootstrap_paths_stage)
        )

    """

    __slots__ = ("condition", "_options", "_default")

    def __init__(self, condition: Union[str, Callable[[PipelineContext], Hashable]]):
        if isinstance(condition, str):
            self.condition = lambda context: context.state.get(condition)
        elif callable(condition):
            self.condition = condition
        else:
            raise TypeError("condition not context variable name or callable")

        self._options: Dict[Hashable, Sequence[Node]] = {}
        self._default = None

    def __call__(self, context: PipelineContext):
        value = self.condition(context)
        branch = self._options.get(value)
        if branch is None:
            if not self._default:
                raise PipelineRuntimeError(f"Switch value {value!r} not matched")
            context.info("🔀 Switch %s -> default", value)
            branch = self._default
        else:
            context.info("🔀 Switch %s matched branch", value)

        call_nodes(context, branch)

    @property
    def name(self):
        return f"Switch into {', '.join(map(str, self._options))}"

    def branches(self) -> Optional[Branches]:
        branches = {str(case): nodes for case, nodes in self._options.items()}
        if self._default:
            branches["*DEFAULT*"] = self._default
        return branches

    def case(self, key: Hashable, *nodes: Node) -> Self:
        self._options[key] = nodes
        return self

    def default(self, *nodes: Node) -> Self:
        self._default = nodes
        return self


class ForEach(Navigable):
    """Call a set of nodes for each value of an iterable context variable.

    Each iteration runs in a nested scope.

    :param target_vars: Variable(s) to unpack each value into.
    :param in_var: Context variable containing the values.
    """

    __slots__ = ("target_vars", "in_var", "_nodes")

    def __init__(self, target_vars: Union[str, Sequence[str]], in_var: str):
        self.target_vars = var_list(target_vars)
        self.in_var = in_var
        self._nodes = ()

    def __call__(self, context: PipelineContext):
        context.info("🔁 %s", self)
        try:
            iterable = context.state[self.in_var]
        except KeyError:
            raise PipelineRuntimeError(f"Variable {self.in_var} not found in context")

        if not isinstance(iterable, Iterable):
            raise PipelineRuntimeError(f"Variable {self.in_var} is not iterable")

        for value in iterable:
            pairs = self._pairs(value)
            context.info("🔂 %s", ", ".join(f"{k}={v}" for k, v in pairs.items()))
            with context:
                context.state.update(pairs)
                call_nodes(context, self._nodes)

    def _pairs(self, value) -> Dict[str, Any]:
        if len(self.target_vars) == 1:
            return {self.target_vars[0]: value}
        if not isinstance(value, Iterable):
            raise PipelineRuntimeError(f"Value {value} from {self.in_var} is not iterable")
        return dict(zip(self.target_vars, value))

    @property
    def name(self):
        if len(self.target_vars) == 1:
            return f"For `{self.target_vars[0]}` in `{self.in_var}`"
        targets = ", ".join(f"`{var}`" for var in self.target_vars)
        return f"For ({targets}) in `{self.in_var}`"

    def branches(self) -> Optional[Branches]:
        return {"loop": self._nodes}

    def loop(self, *nodes: Node) -> Self:
        self._nodes = nodes
        return self


class CaptureErrors(Navigable):
    """Capture exceptions raised by node(s) into a list context variable.

    :param target_var: Name of the context variable holding the list.
    :param try_all: Call every node even if a previous node raised.
    :param except_types: Only capture these exception types.
    """

    __slots__ = ("target_var", "_nodes", "try_all", "except_types")

    def __init__(
        self,
        target_var: str,
        try_all: bool = True,
        *,
        except_types: Union[type, Sequence[type]] = Exception,
    ):
        self.target_var = target_var
        self.except_types = (
            tuple(except_types) if isinstance(except_types, (list, tuple)) else except_types
        )
        self._nodes = []
        self.try_all = try_all

    def __call__(self, context: PipelineContext):
        context.info("🥅 %s", self)
        captured = context.state.setdefault(self.target_var, [])

        for node in self._nodes:
            try:
                call_node(context, node)
            except FatalError:
                raise
            except self.except_types as ex:
                captured.append(ex)
                if not self.try_all:
                    break

    @property
    def name(self):
        return f"Capture errors into `{self.target_var}`"

    def branches(self) -> Optional[Branches]:
        return {"": tuple(self._nodes)}

    def nodes(self, *nodes: Node) -> Self:
        self._nodes.extend(nodes)
        return self


class LogMessage(Navigable):
    """Log a message formatted from the context."""

    __slots__ = ("message", "level")

    def __init__(self, message: str, *, level: int = logging.INFO):
        self.message = message
        self.level = level

    def __call__(self, context: PipelineContext):
        context.log(self.level, context.format(self.message))

    @property
    def name(self):
        return f"Log Message {self.message!r}"

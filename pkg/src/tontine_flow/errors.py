"""Exceptions raised by tontine-flow."""
from typing import Optional, Tuple


class TontineFlowError(Exception):
    pass


# Configuration and input data ################################################


class ConfigurationError(TontineFlowError, ValueError):
    """Configuration value is missing or invalid.

    :param field: Dotted path of the offending field, eg ``scenario.q_min``.
    """

    def __init__(self, message: str, *, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ParseError(TontineFlowError, ValueError):
    """Input file could not be parsed.

    :param line: 1-based line number of the malformed row (header is line 1).
    """

    def __init__(self, message: str, *, source: str = "<input>", line: int = None):
        self.source = source
        self.line = line
        location = f"{source}:{line}" if line else source
        super().__init__(f"{location}: {message}")


class ValidationError(TontineFlowError, ValueError):
    """Value violates a domain invariant."""


class TableRangeError(TontineFlowError, LookupError):
    """Life table lookup outside of the available cells."""

    def __init__(self, age: int, year: int):
        self.cell = (age, year)
        super().__init__(f"Life table has no entry for (age={age}, year={year})")


class CalibrationError(TontineFlowError, ValueError):
    """Mortality model could not be calibrated to the supplied history."""


# Simulation and optimisation #################################################


class SimulationError(TontineFlowError, RuntimeError):
    """Simulation produced an invalid value."""

    def __init__(self, message: str, *, path: int = None, period: int = None):
        self.path = path
        self.period = period
        super().__init__(f"{message} (path={path}, period={period})")


class ContractError(TontineFlowError, ValueError):
    """Account operation called with arguments outside its contract."""


class GroupGainError(TontineFlowError, ArithmeticError):
    """Group gain is undefined (forfeitures with no survivors)."""


class GradientError(TontineFlowError, ArithmeticError):
    """Non-finite gradient.

    :param block: Name of the parameter block, one of ``theta_q``, ``theta_p``
        or ``w_star``.
    """

    def __init__(self, block: str):
        self.block = block
        super().__init__(f"Non-finite gradient in parameter block {block!r}")


class TrainingError(TontineFlowError, RuntimeError):
    """Training aborted."""

    def __init__(self, message: str, *, iteration: int = None):
        self.iteration = iteration
        super().__init__(
            f"{message} at iteration {iteration}" if iteration is not None else message
        )


class PricingError(TontineFlowError, ValueError):
    """Money-back guarantee pricing could not be performed."""


# Pipeline ####################################################################


class PipelineError(TontineFlowError):
    pass


class VariableError(PipelineError, TypeError):
    """Common error for context variables."""


class MissingVariableError(VariableError):
    """Variable not found in context."""


class VariableTypeError(VariableError):
    """Variable type is invalid."""


class PipelineSetupError(PipelineError):
    """Error setting up a pipeline."""


class PipelineRuntimeError(PipelineError, RuntimeError):
    """Error within the pipeline runtime."""


class StageFailedError(PipelineRuntimeError):
    """Error occurred within a stage.

    :param stage: Name of the failed stage.
    """

    def __init__(self, message: str, *, stage: str = None):
        self.stage = stage
        super().__init__(message)


class FatalError(PipelineRuntimeError):
    """Fatal error occurred; terminate the pipeline."""


class SkipStage(PipelineRuntimeError):
    """Skip the current stage."""


def error_payload(ex: BaseException) -> dict:
    """Machine readable description of an error."""
    payload = {"error": type(ex).__name__, "message": str(ex)}
    for attr in ("field", "line", "source", "path", "period", "block", "iteration", "stage"):
        value = getattr(ex, attr, None)
        if value is not None:
            payload[attr] = value if isinstance(value, (int, float)) else str(value)
    cell: Optional[Tuple[int, int]] = getattr(ex, "cell", None)
    if cell:
        payload["cell"] = list(cell)
    return payload

"""Training of the neural controls on the expected withdrawal / CVaR objective."""
import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, TontineFlowError, TrainingError, ValidationError
from .evaluation import NeuralController, evaluate, rollout
from .helpers import BATCH_STREAM, stream
from .market import PathSet
from .policy import Gradients, Policy, PolicyParams, Tape, backward, init_params
from .tontine import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings.

    ``gamma``, ``alpha`` and ``epsilon`` default to the scenario values.
    """

    n_train_paths: int = 4096
    minibatch_size: int = 1024
    iterations: int = 2000
    learning_rate: float = 0.01
    decay_at: float = 0.8
    decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    gamma: Optional[float] = None
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    hidden_layers: tuple = (8, 8)
    hidden_activation: str = "tanh"
    w_star_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        checks = (
            ("iterations", self.iterations >= 1, "must be at least 1"),
            ("minibatch_size", self.minibatch_size >= 1, "must be at least 1"),
            ("minibatch_size", self.minibatch_size <= self.n_train_paths, "must not exceed n_train_paths"),
            ("learning_rate", self.learning_rate >= 0, "must be non-negative"),
            ("decay_at", 0.0 <= self.decay_at <= 1.0, "must lie in [0, 1]"),
        )
        for name, ok, message in checks:
            if not ok:
                raise ConfigurationError(message, field=f"train.{name}")

    def learning_rate_at(self, iteration: int) -> float:
        """Step size; decayed once after ``decay_at`` of the iterations."""
        if iteration >= int(self.decay_at * self.iterations):
            return self.learning_rate * self.decay_factor
        return self.learning_rate

    def weights(self, scenario: ScenarioConfig):
        """Objective weights ``(gamma, alpha, epsilon)``."""
        return (
            scenario.gamma if self.gamma is None else self.gamma,
            scenario.alpha if self.alpha is None else self.alpha,
            scenario.epsilon if self.epsilon is None else self.epsilon,
        )


@dataclass(frozen=True, eq=False)
class ObjectiveResult:
    value: float
    per_path: np.ndarray
    terminal_wealth: np.ndarray
    gradients: Optional[Gradients] = None


def objective(
    policy: Policy,
    params: PolicyParams,
    paths: PathSet,
    scenario: ScenarioConfig,
    gamma: float = None,
    alpha: float = None,
    epsilon: float = None,
    *,
    with_gradients: bool = False,
) -> ObjectiveResult:
    """Sample mean of ``sum(q) + gamma * (w + min(W_T - w, 0) / alpha) + epsilon * W_T``.

    Weights default to the scenario values.
    """
    gamma = scenario.gamma if gamma is None else gamma
    alpha = scenario.alpha if alpha is None else alpha
    epsilon = scenario.epsilon if epsilon is None else epsilon

    tape = Tape(policy, params) if with_gradients else None
    result = rollout(NeuralController(policy, params), paths, scenario, tape)
    terminal = result.terminal_wealth
    w_star = params.w_star
    per_path = (
        result.total_withdrawals
        + gamma * (w_star + np.minimum(terminal - w_star, 0.0) / alpha)
        + epsilon * terminal
    )
    gradients = (
        backward(tape, gamma=gamma, alpha=alpha, epsilon=epsilon) if with_gradients else None
    )
    return ObjectiveResult(float(per_path.mean()), per_path, terminal, gradients)


class Adam:
    """Adam with bias correction, ascending the objective.

    Parameters are held as named blocks; the threshold is optimised in units
    of ``W0`` so all blocks have a comparable scale.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t

        for key, value in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(value)
                self.v[key] = np.zeros_like(value)
            self.m[key] *= self.beta1
            self.m[key] += (1.0 - self.beta1) * g
            self.v[key] *= self.beta2
            self.v[key] += (1.0 - self.beta2) * (g * g)
            # Gradient ascent
            value += lr / bc1 * self.m[key] / (np.sqrt(self.v[key] / bc2) + self.epsilon)


def _blocks(params: PolicyParams, W0: float) -> Dict[str, np.ndarray]:
    return {
        "theta_q": params.theta_q.copy(),
        "theta_p": params.theta_p.copy(),
        "w_star": np.array([params.w_star / W0]),
    }


def _grad_blocks(gradients: Gradients, W0: float) -> Dict[str, np.ndarray]:
    return {
        "theta_q": gradients.theta_q,
        "theta_p": gradients.theta_p,
        "w_star": np.array([gradients.w_star * W0]),
    }


def _params(blocks: Dict[str, np.ndarray], W0: float) -> PolicyParams:
    return PolicyParams(
        blocks["theta_q"].copy(), blocks["theta_p"].copy(), float(blocks["w_star"][0] * W0)
    )


@dataclass(frozen=True, eq=False)
class TrainReport:
    objective_trace: List[float]
    config: TrainConfig
    paths_sha256: str
    gamma: float
    alpha: float
    epsilon: float
    eval_metrics: Optional[dict] = None

    def as_dict(self) -> dict:
        return {
            "objective_trace": self.objective_trace,
            "config": asdict(self.config),
            "paths_sha256": self.paths_sha256,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "eval_metrics": self.eval_metrics,
        }


def train(
    config: TrainConfig,
    scenario: ScenarioConfig,
    paths: PathSet,
    *,
    policy: Policy = None,
    params: PolicyParams = None,
    eval_paths: PathSet = None,
):
    """Maximise the sampled objective by minibatch Adam.

    Minibatches are drawn without replacement from a stream derived from
    ``config.seed`` so identical inputs give identical parameters.

    :return: Tuple of trained :class:`PolicyParams` and :class:`TrainReport`.
    """
    if config.n_train_paths > paths.n_paths:
        raise ConfigurationError(
            f"{config.n_train_paths} training paths requested; PathSet has {paths.n_paths}",
            field="train.n_train_paths",
        )
    gamma, alpha, epsilon = config.weights(scenario)
    policy = policy or Policy.for_scenario(
        scenario, config.hidden_layers, config.hidden_activation
    )
    params = params or init_params(policy, config.seed, w_star_fraction=config.w_star_fraction)

    paths = paths.take(slice(0, config.n_train_paths))
    blocks = _blocks(params, scenario.W0)
    optimiser = Adam(config.beta1, config.beta2, config.eps_adam)
    rng = stream(config.seed, BATCH_STREAM)
    full_batch = config.minibatch_size >= paths.n_paths

    trace = []
    for iteration in range(config.iterations):
        if full_batch:
            batch = paths
        else:
            rows = np.sort(rng.choice(paths.n_paths, size=config.minibatch_size, replace=False))
            batch = paths.take(rows)

        current = _params(blocks, scenario.W0)
        result = objective(
            policy, current, batch, scenario, gamma, alpha, epsilon, with_gradients=True
        )
        if not np.isfinite(result.value):
            raise TrainingError("Non-finite objective", iteration=iteration)
        trace.append(result.value)

        optimiser.step(
            blocks, _grad_blocks(result.gradients, scenario.W0), config.learning_rate_at(iteration)
        )
        if iteration % max(1, config.iterations // 10) == 0:
            log.info("Iteration %d: objective %.4f", iteration, result.value)

    params = _params(blocks, scenario.W0)
    eval_metrics = None
    if eval_paths is not None:
        metrics = evaluate(NeuralController(policy, params), eval_paths, scenario, alpha)
        eval_metrics = asdict(metrics)

    report = TrainReport(
        objective_trace=trace,
        config=config,
        paths_sha256=paths.fingerprint(),
        gamma=gamma,
        alpha=alpha,
        epsilon=epsilon,
        eval_metrics=eval_metrics,
    )
    return params, report


@dataclass(frozen=True, eq=False)
class FrontierPoint:
    """Held-out expected withdrawal and tail risk of a policy trained at ``gamma``.

    ``var_alpha`` is the held-out VaR of terminal wealth, the exact maximiser
    of the CVaR term for the fixed policy, reported next to the trained
    threshold ``w_star``.
    """

    gamma: float
    ew_annualized: float
    cvar_alpha: float
    w_star: float
    var_alpha: float
    params: PolicyParams

    def as_row(self) -> dict:
        return {
            "gamma": self.gamma,
            "ew_annualized": self.ew_annualized,
            "cvar": self.cvar_alpha,
            "w_star": self.w_star,
            "var": self.var_alpha,
        }


def train_point(
    gamma: float,
    config: TrainConfig,
    scenario: ScenarioConfig,
    train_paths: PathSet,
    eval_paths: PathSet,
) -> FrontierPoint:
    """Train at one ``gamma`` and evaluate on held-out paths."""
    scenario = replace(scenario, gamma=gamma)
    config = replace(config, gamma=gamma)
    policy = Policy.for_scenario(scenario, config.hidden_layers, config.hidden_activation)
    params, _ = train(config, scenario, train_paths, policy=policy)
    metrics = evaluate(NeuralController(policy, params), eval_paths, scenario, config.weights(scenario)[1])
    log.info(
        "gamma=%g: EW %.2f, CVaR %.2f, w* %.2f", gamma, metrics.ew_annualized, metrics.cvar, params.w_star
    )
    return FrontierPoint(gamma, metrics.ew_annualized, metrics.cvar, params.w_star, metrics.var, params)


def sweep_frontier(
    gammas: Sequence[float],
    config: TrainConfig,
    scenario: ScenarioConfig,
    train_paths: PathSet,
    eval_paths: PathSet,
) -> List[FrontierPoint]:
    """One trained policy per ``gamma``, sorted by CVaR.

    Training failures are logged and the failed ``gamma`` is left out.
    """
    if train_paths.fingerprint() == eval_paths.fingerprint():
        raise ValidationError("Training and evaluation paths must differ")

    points = []
    for gamma in gammas:
        try:
            points.append(train_point(gamma, config, scenario, train_paths, eval_paths))
        except TontineFlowError as ex:
            log.warning("Training failed for gamma=%g: %s", gamma, ex)
    return sorted(points, key=lambda point: point.cvar_alpha)

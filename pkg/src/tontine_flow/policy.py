"""Neural withdrawal and allocation controls.

Two small fully connected networks take ``(wealth / W0, t / T)`` as input.
The withdrawal head squashes its scalar output with a sigmoid scaled by the
wealth dependent admissible range; the allocation head is a softmax over
assets. One parameter set is shared by every decision time.

Gradients of the sampled objective are computed exactly by a reverse pass
over a :class:`Tape` recorded during the wealth recursion.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, softmax

from .errors import ConfigurationError, GradientError
from .helpers import INIT_STREAM, stream

log = logging.getLogger(__name__)

ACTIVATIONS = {
    # name: (activation, derivative expressed in terms of the activation output)
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
    "sigmoid": (expit, lambda h: h * (1.0 - h)),
}

Layer = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class NetSpec:
    """Fully connected network with a linear output layer."""

    output_dim: int
    hidden_layers: Tuple[int, ...] = (8, 8)
    hidden_activation: str = "tanh"
    input_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))
        if any(width < 1 for width in self.hidden_layers):
            raise ConfigurationError("layer widths must be at least 1", field="policy.hidden_layers")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"unknown activation {self.hidden_activation!r}; "
                f"expected one of {', '.join(ACTIVATIONS)}",
                field="policy.hidden_activation",
            )
        if self.output_dim < 1 or self.input_dim < 1:
            raise ConfigurationError("input and output dimensions must be at least 1")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        widths = (self.input_dim, *self.hidden_layers, self.output_dim)
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    def unpack(self, theta: np.ndarray) -> List[Layer]:
        """Views of the weight matrix and bias of each layer within ``theta``."""
        if theta.shape != (self.n_params,):
            raise ConfigurationError(
                f"parameter vector has shape {theta.shape}; expected ({self.n_params},)"
            )
        layers, offset = [], 0
        for fan_in, fan_out in self.layer_shapes:
            weights = theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = theta[offset : offset + fan_out]
            offset += fan_out
            layers.append((weights, bias))
        return layers

    def forward(self, theta: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Network output and the input of every layer (the backward cache)."""
        activation, _ = ACTIVATIONS[self.hidden_activation]
        layers = self.unpack(theta)
        inputs = []
        h = x
        for idx, (weights, bias) in enumerate(layers):
            inputs.append(h)
            h = h @ weights + bias
            if idx < len(layers) - 1:
                h = activation(h)
        return h, inputs

    def backward(
        self, theta: np.ndarray, inputs: List[np.ndarray], d_out: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Parameter and input gradients summed over rows."""
        _, derivative = ACTIVATIONS[self.hidden_activation]
        layers = self.unpack(theta)
        grad = np.zeros_like(theta)
        grad_layers = self.unpack(grad)

        d = d_out
        for idx in reversed(range(len(layers))):
            weights, _ = layers[idx]
            grad_weights, grad_bias = grad_layers[idx]
            h_in = inputs[idx]
            grad_weights += h_in.T @ d
            grad_bias += d.sum(axis=0)
            d = d @ weights.T
            if idx > 0:
                d = d * derivative(h_in)
        return grad, d


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Flat parameters of both networks and the CVaR threshold."""

    theta_q: np.ndarray
    theta_p: np.ndarray
    w_star: float

    def as_dict(self) -> dict:
        return {
            "theta_q": self.theta_q.tolist(),
            "theta_p": self.theta_p.tolist(),
            "w_star": float(self.w_star),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolicyParams":
        return cls(
            theta_q=np.asarray(data["theta_q"], dtype=float),
            theta_p=np.asarray(data["theta_p"], dtype=float),
            w_star=float(data["w_star"]),
        )


@dataclass(frozen=True, eq=False)
class Gradients(PolicyParams):
    """Gradient of the objective; same layout as :class:`PolicyParams`."""

    def check_finite(self):
        for block in ("theta_q", "theta_p", "w_star"):
            if not np.isfinite(getattr(self, block)).all():
                raise GradientError(block)


@dataclass(frozen=True, eq=False)
class QCache:
    inputs: List[np.ndarray]
    sigmoid: np.ndarray
    range_: np.ndarray
    d_range: np.ndarray
    d_feature: np.ndarray


@dataclass(frozen=True, eq=False)
class PCache:
    inputs: List[np.ndarray]
    weights: np.ndarray
    d_feature: np.ndarray


@dataclass(frozen=True)
class Policy:
    """Withdrawal and allocation networks for a scenario.

    Wealth enters the networks as ``clip(W / W0, -wealth_clip, wealth_clip)``
    and time as ``t / T``; decisions use unscaled wealth.
    """

    q_net: NetSpec
    p_net: NetSpec
    W0: float
    T: float
    wealth_clip: float = 5.0

    @classmethod
    def for_scenario(
        cls,
        scenario,
        hidden_layers: Sequence[int] = (8, 8),
        hidden_activation: str = "tanh",
    ) -> "Policy":
        return cls(
            q_net=NetSpec(1, tuple(hidden_layers), hidden_activation),
            p_net=NetSpec(scenario.asset_count, tuple(hidden_layers), hidden_activation),
            W0=scenario.W0,
            T=scenario.T,
        )

    @property
    def n_assets(self) -> int:
        return self.p_net.output_dim

    def features(self, wealth, t) -> Tuple[np.ndarray, np.ndarray]:
        """Network inputs and ``d input[0] / d wealth``."""
        wealth = np.atleast_1d(np.asarray(wealth, dtype=float))
        scaled = wealth / self.W0
        inside = np.abs(scaled) < self.wealth_clip
        x = np.column_stack(
            [
                np.clip(scaled, -self.wealth_clip, self.wealth_clip),
                np.broadcast_to(np.asarray(t, dtype=float) / self.T, wealth.shape),
            ]
        )
        return x, inside / self.W0

    def forward_q(self, theta_q, wealth_pre, t, q_min: float, q_max: float, *, cache: bool = False):
        """Withdrawal ``q_min + max(min(q_max, W) - q_min, 0) * sigmoid(z)``."""
        wealth = np.atleast_1d(np.asarray(wealth_pre, dtype=float))
        x, d_feature = self.features(wealth, t)
        z, inputs = self.q_net.forward(np.asarray(theta_q, dtype=float), x)
        sig = expit(z[:, 0])
        capped = np.minimum(q_max, wealth)
        range_ = np.maximum(capped - q_min, 0.0)
        q = q_min + range_ * sig

        if np.ndim(wealth_pre) == 0:
            q = float(q[0])
        if not cache:
            return q
        d_range = ((wealth < q_max) & (capped - q_min > 0)).astype(float)
        return q, QCache(inputs, sig, range_, d_range, d_feature)

    def forward_p(self, theta_p, wealth_post, t, *, cache: bool = False):
        """Allocation fractions, one row per path."""
        x, d_feature = self.features(wealth_post, t)
        logits, inputs = self.p_net.forward(np.asarray(theta_p, dtype=float), x)
        weights = softmax(logits, axis=1)
        weights /= weights.sum(axis=1, keepdims=True)

        if np.ndim(wealth_post) == 0:
            weights = weights[0]
        if not cache:
            return weights
        return weights, PCache(inputs, weights, d_feature)


def init_params(policy: Policy, seed: int, *, w_star_fraction: float = 0.5) -> PolicyParams:
    """Uniform fan-in initialisation with zero biases."""
    rng = stream(seed, INIT_STREAM)

    def init(spec: NetSpec) -> np.ndarray:
        theta = np.zeros(spec.n_params)
        for weights, _ in spec.unpack(theta):
            bound = 1.0 / np.sqrt(weights.shape[0])
            weights[:] = rng.uniform(-bound, bound, size=weights.shape)
        return theta

    theta_q = init(policy.q_net)
    theta_p = init(policy.p_net)
    return PolicyParams(theta_q, theta_p, w_star_fraction * policy.W0)


def zero_params(policy: Policy, w_star: float = 0.0) -> PolicyParams:
    return PolicyParams(np.zeros(policy.q_net.n_params), np.zeros(policy.p_net.n_params), w_star)


# Reverse pass ################################################################


@dataclass(eq=False)
class StepRecord:
    """Quantities of one decision time needed by the reverse pass."""

    factor: np.ndarray
    q_cache: Optional[QCache] = None
    wealth_post: Optional[np.ndarray] = None
    solvent: Optional[np.ndarray] = None
    growth: Optional[np.ndarray] = None
    gross: Optional[np.ndarray] = None
    p_cache: Optional[PCache] = None


@dataclass(eq=False)
class Tape:
    """Forward record of a neural rollout."""

    policy: Policy
    params: PolicyParams
    steps: List[StepRecord] = field(default_factory=list)
    terminal_wealth: Optional[np.ndarray] = None


def objective_adjoints(
    terminal_wealth: np.ndarray, w_star: float, gamma: float, alpha: float, epsilon: float
) -> Tuple[np.ndarray, float]:
    """Per-path ``dJ / dW_T`` and the path mean of ``dJ / dw_star``.

    ``min(u, 0)`` has derivative 1 for ``u < 0`` and 0 otherwise.
    """
    below = (terminal_wealth < w_star).astype(float)
    d_terminal = gamma / alpha * below + epsilon
    d_w_star = float(np.mean(gamma * (1.0 - below / alpha)))
    return d_terminal, d_w_star


def backward(tape: Tape, *, gamma: float, alpha: float, epsilon: float) -> Gradients:
    """Exact gradient of the path averaged objective

    ``sum(q_m) + gamma * (w + min(W_T - w, 0) / alpha) + epsilon * W_T``

    with respect to both networks and the threshold ``w``.
    """
    policy, params = tape.policy, tape.params
    n_paths = len(tape.terminal_wealth)
    d_wealth, d_w_star = objective_adjoints(
        tape.terminal_wealth, params.w_star, gamma, alpha, epsilon
    )

    grad_q = np.zeros_like(params.theta_q)
    grad_p = np.zeros_like(params.theta_p)

    *decisions, terminal = tape.steps
    d_gross = d_wealth * terminal.factor
    for record in reversed(decisions):
        d_post = d_gross * record.growth

        # Allocation: G = W+ * sum(p * R) on solvent rows
        d_weights = (d_gross * record.wealth_post)[:, None] * record.gross
        weights = record.p_cache.weights
        d_logits = weights * (d_weights - (weights * d_weights).sum(axis=1, keepdims=True))
        d_logits[~record.solvent] = 0.0
        grad, d_x = policy.p_net.backward(params.theta_p, record.p_cache.inputs, d_logits)
        grad_p += grad
        d_post = d_post + d_x[:, 0] * record.p_cache.d_feature

        # Withdrawal: W+ = W - q and q contributes directly to the objective
        cache = record.q_cache
        d_q = 1.0 - d_post
        d_z = d_q * cache.range_ * cache.sigmoid * (1.0 - cache.sigmoid)
        grad, d_x = policy.q_net.backward(params.theta_q, cache.inputs, d_z[:, None])
        grad_q += grad
        d_pre = d_post + d_q * cache.d_range * cache.sigmoid + d_x[:, 0] * cache.d_feature

        d_gross = d_pre * record.factor

    gradients = Gradients(grad_q / n_paths, grad_p / n_paths, d_w_star)
    gradients.check_finite()
    return gradients

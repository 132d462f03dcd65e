"""Policy rollouts, risk/reward estimates and report tables."""
import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigurationError, ValidationError
from .market import PathSet
from .policy import Policy, PolicyParams, StepRecord, Tape
from .risk import empirical_var_cvar, upper_var_cvar
from .tontine import ScenarioConfig, credit_fee_factor, step_account, withdrawal_bounds

__all__ = (
    "empirical_var_cvar",
    "upper_var_cvar",
    "Controller",
    "NeuralController",
    "ConstantRule",
    "RolloutResult",
    "rollout",
    "Metrics",
    "evaluate",
    "simplex_grid",
    "BenchmarkResult",
    "benchmark_search",
    "Heatmap",
    "export_heatmap",
)

log = logging.getLogger(__name__)


class Controller(Protocol):
    """Withdrawal and allocation decisions at a decision time."""

    n_assets: int

    def withdrawal(self, wealth_pre: np.ndarray, m: int, scenario: ScenarioConfig):
        """Return ``(q, cache)``."""

    def allocation(self, wealth_post: np.ndarray, m: int, scenario: ScenarioConfig):
        """Return ``(weights, cache)``."""


@dataclass(frozen=True)
class NeuralController:
    policy: Policy
    params: PolicyParams

    @property
    def n_assets(self) -> int:
        return self.policy.n_assets

    def withdrawal(self, wealth_pre, m, scenario):
        return self.policy.forward_q(
            self.params.theta_q, wealth_pre, m, scenario.q_min, scenario.q_max, cache=True
        )

    def allocation(self, wealth_post, m, scenario):
        return self.policy.forward_p(self.params.theta_p, wealth_post, m, cache=True)


@dataclass(frozen=True)
class ConstantRule:
    """Fixed withdrawal (clamped to the admissible range) and fixed weights."""

    q: float
    weights: Tuple[float, ...]

    @property
    def n_assets(self) -> int:
        return len(self.weights)

    def withdrawal(self, wealth_pre, m, scenario):
        low, high = withdrawal_bounds(wealth_pre, m, scenario.M, scenario.q_min, scenario.q_max)
        return np.clip(self.q, low, high), None

    def allocation(self, wealth_post, m, scenario):
        return np.tile(np.asarray(self.weights, dtype=float), (len(wealth_post), 1)), None


@dataclass(frozen=True, eq=False)
class RolloutResult:
    """Withdrawals and wealth (after credit and fee, before withdrawal) at
    every decision time, shape ``(n_paths, M + 1)``."""

    withdrawals: np.ndarray
    wealth_panel: np.ndarray

    @property
    def terminal_wealth(self) -> np.ndarray:
        return self.wealth_panel[:, -1]

    @property
    def total_withdrawals(self) -> np.ndarray:
        return self.withdrawals.sum(axis=1)


def _check_dimensions(controller: Controller, paths: PathSet, scenario: ScenarioConfig):
    if paths.n_periods != scenario.M:
        raise ValidationError(f"PathSet has {paths.n_periods} periods; scenario has M={scenario.M}")
    if paths.n_assets != scenario.asset_count:
        raise ValidationError(
            f"PathSet has {paths.n_assets} assets; scenario has {scenario.asset_count}"
        )
    if controller.n_assets != paths.n_assets:
        raise ValidationError(
            f"Controller allocates over {controller.n_assets} assets; paths have {paths.n_assets}"
        )


def rollout(
    controller: Controller,
    paths: PathSet,
    scenario: ScenarioConfig,
    tape: Optional[Tape] = None,
) -> RolloutResult:
    """Run the account recursion on every path.

    At each ``t_m``: credit and fee, then (for ``m < M``) withdrawal and
    rebalancing. Gain rates at ``t_m`` use the path's ``delta[:, m - 1]``.

    :param tape: Filled with the records needed by :func:`policy.backward`.
    """
    _check_dimensions(controller, paths, scenario)
    n_paths, M = paths.n_paths, scenario.M
    delta = paths.delta

    gross_wealth = np.full(n_paths, float(scenario.W0))
    withdrawals = np.zeros((n_paths, M + 1))
    wealth_panel = np.zeros((n_paths, M + 1))

    for m in range(M + 1):
        delta_prev = delta[:, m - 1] if m >= 1 else np.zeros(n_paths)
        factor = credit_fee_factor(
            m, delta_prev, gross_wealth, scenario.varrho, tontine=scenario.tontine
        )
        wealth = factor * gross_wealth
        wealth_panel[:, m] = wealth
        if m == M:
            if tape is not None:
                tape.steps.append(StepRecord(factor))
            break

        q, q_cache = controller.withdrawal(wealth, m, scenario)
        weights, p_cache = controller.allocation(wealth - q, m, scenario)
        gross_wealth, state = step_account(
            wealth,
            q,
            weights,
            paths.gross[:, m],
            scenario.mu_bc,
            bond_index=scenario.bond_index,
        )
        withdrawals[:, m] = q

        if tape is not None:
            tape.steps.append(
                StepRecord(
                    factor=factor,
                    q_cache=q_cache,
                    wealth_post=state.wealth_post,
                    solvent=~state.insolvent,
                    growth=state.growth,
                    gross=paths.gross[:, m],
                    p_cache=p_cache,
                )
            )

    if tape is not None:
        tape.terminal_wealth = wealth_panel[:, M].copy()
    return RolloutResult(withdrawals, wealth_panel)


@dataclass(frozen=True)
class Metrics:
    ew_annualized: float
    cvar: float
    var: float
    mean_terminal_wealth: float


def evaluate(
    controller: Controller, paths: PathSet, scenario: ScenarioConfig, alpha: float = None
) -> Metrics:
    """Expected annual withdrawal and lower tail risk of terminal wealth."""
    result = rollout(controller, paths, scenario)
    var, cvar = empirical_var_cvar(result.terminal_wealth, alpha or scenario.alpha)
    return Metrics(
        ew_annualized=float(result.total_withdrawals.mean() / scenario.T),
        cvar=cvar,
        var=var,
        mean_terminal_wealth=float(result.terminal_wealth.mean()),
    )


# Constant-weight benchmark ###################################################


def simplex_grid(n_assets: int, step: float) -> np.ndarray:
    """All weight vectors with entries on the ``step`` grid summing to one,
    in lexicographic order."""
    divisions = round(1.0 / step)
    if divisions < 1 or abs(divisions * step - 1.0) > 1e-9:
        raise ConfigurationError(f"grid step {step} does not divide 1", field="evaluation.benchmark_step")

    rows = [
        combo
        for combo in itertools.product(range(divisions + 1), repeat=n_assets - 1)
        if sum(combo) <= divisions
    ]
    grid = np.array([(*combo, divisions - sum(combo)) for combo in rows], dtype=float)
    grid /= divisions
    order = np.lexsort(grid.T[::-1])
    return grid[order]


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    weights: np.ndarray
    cvar: float
    var: float
    ew_annualized: float
    candidates: pd.DataFrame


def benchmark_search(
    paths: PathSet, scenario: ScenarioConfig, grid_step: float = 0.1, q: float = None
) -> BenchmarkResult:
    """Best constant-weight allocation with a constant withdrawal.

    Picks the weights maximising the lower tail CVaR of terminal wealth (ties
    go to the lexicographically smallest weights).

    :param q: Constant withdrawal; defaults to ``q_min``.
    """
    q = scenario.q_min if q is None else q
    grid = simplex_grid(paths.n_assets, grid_step)

    records = []
    best = None
    for weights in grid:
        rule = ConstantRule(q, tuple(weights))
        metrics = evaluate(rule, paths, scenario)
        records.append((*weights, metrics.cvar, metrics.var, metrics.ew_annualized))
        if best is None or metrics.cvar > best[1].cvar:
            best = (weights, metrics)

    names = list(paths.asset_names) or [f"asset_{idx}" for idx in range(paths.n_assets)]
    candidates = pd.DataFrame(records, columns=[*names, "cvar", "var", "ew_annualized"])
    weights, metrics = best
    log.info(
        "Best constant benchmark %s: CVaR %.2f", np.array2string(weights, precision=2), metrics.cvar
    )
    return BenchmarkResult(weights, metrics.cvar, metrics.var, metrics.ew_annualized, candidates)


# Heatmaps ####################################################################


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Control surfaces over wealth (rows) and decision time (columns)."""

    withdrawal: pd.DataFrame
    allocations: Dict[str, pd.DataFrame]
    percentiles: Optional[pd.DataFrame] = None


def default_wealth_grid(scenario: ScenarioConfig) -> np.ndarray:
    return np.linspace(0.0, 2.0 * scenario.W0, 101)


def wealth_percentiles(result: RolloutResult, levels: Sequence[float] = (5, 50, 95)) -> pd.DataFrame:
    values = np.percentile(result.wealth_panel, levels, axis=0).T
    return pd.DataFrame(
        values,
        index=pd.RangeIndex(result.wealth_panel.shape[1], name="m"),
        columns=[f"p{level:g}" for level in levels],
    )


def export_heatmap(
    controller: NeuralController,
    scenario: ScenarioConfig,
    wealth_grid: Sequence[float] = None,
    times: Sequence[int] = None,
    *,
    paths: PathSet = None,
) -> Heatmap:
    """Withdrawal and allocation surfaces of a trained policy.

    Withdrawals are evaluated at wealth ``W`` before withdrawal; allocations
    at the wealth remaining after that withdrawal. With ``paths`` the 5th,
    50th and 95th percentile wealth trajectories are included.
    """
    grid = default_wealth_grid(scenario) if wealth_grid is None else np.asarray(wealth_grid, float)
    if not np.isfinite(grid).all() or (np.diff(grid) <= 0).any():
        raise ValidationError("Wealth grid must be finite and ascending")
    times = list(range(scenario.M)) if times is None else list(times)
    n_assets = controller.n_assets

    withdrawal = np.empty((len(grid), len(times)))
    allocations = np.empty((n_assets, len(grid), len(times)))
    for col, m in enumerate(times):
        q, _ = controller.withdrawal(grid, m, scenario)
        weights, _ = controller.allocation(grid - q, m, scenario)
        withdrawal[:, col] = q
        allocations[:, :, col] = weights.T

    index = pd.Index(grid, name="wealth")
    columns = pd.Index(times, name="m")
    asset_names = (
        list(paths.asset_names)
        if paths is not None and paths.asset_names
        else [f"asset_{idx}" for idx in range(n_assets)]
    )
    percentiles = wealth_percentiles(rollout(controller, paths, scenario)) if paths is not None else None
    return Heatmap(
        withdrawal=pd.DataFrame(withdrawal, index=index, columns=columns),
        allocations={
            name: pd.DataFrame(allocations[idx], index=index, columns=columns)
            for idx, name in enumerate(asset_names)
        },
        percentiles=percentiles,
    )

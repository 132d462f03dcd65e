"""Tontine account mechanics.

Per-period ordering at each decision time ``t_m``: the mortality credit is
applied, then the fee is deducted, then the withdrawal is taken and the
remainder rebalanced. Functions are vectorised over paths; scalar inputs
give scalar outputs.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError, GroupGainError, ValidationError

log = logging.getLogger(__name__)

#: Tolerance used when checking allocations lie on the simplex.
SIMPLEX_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ScenarioConfig:
    """Scalar parameters of a retirement scenario.

    Monetary amounts are thousands of real currency units; periods are one
    year so ``T == M``.
    """

    W0: float = 1000.0
    L0: float = 1000.0
    T: int = 30
    M: int = 30
    q_min: float = 40.0
    q_max: float = 80.0
    varrho: float = 0.0011
    mu_bc: float = 0.02
    alpha: float = 0.05
    gamma: float = 1.0
    epsilon: float = -1e-4
    asset_count: int = 2
    x0: int = 65
    y0: int = 2022
    tontine: bool = True
    bond_index: int = 1

    def __post_init__(self):
        checks = (
            ("W0", self.W0 > 0, "must be positive"),
            ("L0", self.L0 > 0, "must be positive"),
            ("M", self.M >= 1, "must be at least 1"),
            ("T", self.T == self.M, "must equal M (annual decision times)"),
            ("q_min", self.q_min >= 0, "must be non-negative"),
            ("q_max", self.q_max >= self.q_min, "must not be below q_min"),
            ("varrho", 0.0 <= self.varrho < 1.0, "must lie in [0, 1)"),
            ("alpha", 0.0 < self.alpha <= 1.0, "must lie in (0, 1]"),
            ("gamma", self.gamma >= 0, "must be non-negative"),
            ("asset_count", self.asset_count in (2, 4), "must be 2 or 4"),
            ("bond_index", 0 <= self.bond_index < self.asset_count, "must index an asset"),
        )
        for name, ok, message in checks:
            if not ok:
                raise ConfigurationError(message, field=f"scenario.{name}")


def _result(value: np.ndarray, *inputs):
    """Return a Python float when every input was scalar."""
    if all(np.ndim(arg) == 0 for arg in inputs):
        return float(value)
    return value


def effective_gain(m: int, delta_prev, wealth, *, tontine: bool = True):
    """Gain rate applied at ``t_m``: zero at inception, for insolvent accounts
    and for a non-pooled account; otherwise ``delta / (1 - delta)``."""
    delta = np.asarray(delta_prev, dtype=float)
    wealth = np.asarray(wealth, dtype=float)
    if ((delta < 0) | (delta >= 1)).any():
        raise ValidationError("Death probabilities must lie in [0, 1)")
    if m == 0 or not tontine:
        gain = np.zeros(np.broadcast(delta, wealth).shape)
    else:
        gain = np.where(wealth > 0, delta / (1.0 - delta), 0.0)
    return _result(gain, delta_prev, wealth)


def credit_fee_factor(m: int, delta_prev, gross_wealth, varrho: float, *, tontine: bool = True):
    """Multiplier taking gross wealth to wealth after credit and fee.

    The factor is locally constant in wealth; it only changes where wealth
    changes sign.
    """
    gross = np.asarray(gross_wealth, dtype=float)
    gain = np.asarray(effective_gain(m, delta_prev, gross, tontine=tontine))
    credited = (1.0 + gain) * gross
    charge = m >= 1 and tontine
    fee = np.where(charge & (credited > 0), 1.0 - varrho, 1.0)
    return _result((1.0 + gain) * fee, delta_prev, gross_wealth)


def apply_credit_and_fee(
    m: int, delta_prev, gross_wealth, varrho: float, *, tontine: bool = True
):
    """Wealth ``W_{m^-}`` after the mortality credit and the fee."""
    factor = credit_fee_factor(m, delta_prev, gross_wealth, varrho, tontine=tontine)
    return _result(np.asarray(factor) * np.asarray(gross_wealth, dtype=float), delta_prev, gross_wealth)


def withdrawal_bounds(wealth_pre, m: int, M: int, q_min: float, q_max: float):
    """Admissible withdrawal interval ``(low, high)``.

    ``[q_min, q_max]`` with the upper bound reduced to ``max(q_min, W)`` when
    wealth is below ``q_max``; ``{0}`` at the terminal time.
    """
    wealth = np.asarray(wealth_pre, dtype=float)
    if m >= M:
        zero = np.zeros(wealth.shape)
        return _result(zero, wealth_pre), _result(zero, wealth_pre)
    low = np.full(wealth.shape, float(q_min))
    high = np.maximum(q_min, np.minimum(q_max, wealth))
    return _result(low, wealth_pre), _result(high, wealth_pre)


@dataclass(frozen=True, eq=False)
class AccountState:
    """Account after the withdrawal and rebalancing at ``t_m``."""

    wealth_pre: np.ndarray
    wealth_post: np.ndarray
    allocations: np.ndarray
    insolvent: np.ndarray
    growth: np.ndarray


def insolvent_weights(n_paths: int, n_assets: int, bond_index: int) -> np.ndarray:
    weights = np.zeros((n_paths, n_assets))
    weights[:, bond_index] = 1.0
    return weights


def check_simplex(weights: np.ndarray, rows: np.ndarray = None):
    """Raise a :class:`ContractError` if any selected row is off the simplex."""
    weights = weights if rows is None else weights[rows]
    if weights.size == 0:
        return
    if (weights < -SIMPLEX_TOLERANCE).any() or (
        np.abs(weights.sum(axis=-1) - 1.0) > SIMPLEX_TOLERANCE
    ).any():
        raise ContractError("Allocation is not on the simplex (no leverage, no short selling)")


def step_account(
    wealth_pre,
    q,
    p,
    period_gross,
    mu_bc: float,
    *,
    bond_index: int = 1,
) -> Tuple[np.ndarray, AccountState]:
    """Withdraw, rebalance and grow the account over one period.

    A solvent account invests ``p * (W - q)``; an insolvent one holds the
    (negative) balance in the bond leg, accruing the bond return plus the
    borrowing spread.

    :return: Gross wealth at the next decision time and the account state.
    """
    scalar = np.ndim(wealth_pre) == 0
    wealth = np.atleast_1d(np.asarray(wealth_pre, dtype=float))
    q = np.broadcast_to(np.asarray(q, dtype=float), wealth.shape)
    gross = np.atleast_2d(np.asarray(period_gross, dtype=float))
    weights = np.atleast_2d(np.asarray(p, dtype=float))
    weights = np.broadcast_to(weights, gross.shape)

    wealth_post = wealth - q
    solvent = wealth_post > 0
    check_simplex(weights, solvent)

    weights = np.where(solvent[:, None], weights, insolvent_weights(*gross.shape, bond_index))
    growth = np.where(
        solvent,
        (weights * gross).sum(axis=1),
        gross[:, bond_index] * np.exp(mu_bc),
    )
    next_wealth = wealth_post * growth
    state = AccountState(
        wealth, wealth_post, weights * wealth_post[:, None], ~solvent, growth
    )
    return (float(next_wealth[0]) if scalar else next_wealth), state


# Pool ########################################################################


@dataclass(frozen=True, eq=False)
class PoolState:
    """Members of a tontine pool at one decision time."""

    wealth: np.ndarray
    delta: np.ndarray
    alive: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.wealth.shape != self.delta.shape:
            raise ValidationError("wealth and delta must have the same length")
        if ((self.delta < 0) | (self.delta >= 1)).any():
            raise ValidationError("Death probabilities must lie in [0, 1)")
        if self.alive is None:
            object.__setattr__(self, "alive", np.ones(self.wealth.shape, dtype=bool))
        if (self.wealth[self.alive] < 0).any():
            raise ValidationError("Pooled member wealth must be non-negative")

    @property
    def gain_rates(self) -> np.ndarray:
        return self.delta / (1.0 - self.delta)


def draw_deaths(pool: PoolState, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli death indicators for living members."""
    return (rng.random(pool.wealth.shape) < pool.delta) & pool.alive


GroupGainMode = Literal["exact", "unit"]


def pool_credits(
    pool: PoolState, deaths: np.ndarray, mode: GroupGainMode = "exact"
) -> Tuple[np.ndarray, float]:
    """Mortality credits paid to survivors and the group gain.

    In ``exact`` mode the group gain scales credits so they exactly balance
    the forfeited wealth of the deceased; ``unit`` mode uses a group gain of 1.
    """
    deaths = np.asarray(deaths, dtype=bool) & pool.alive
    survivors = pool.alive & ~deaths
    expected = np.where(survivors, pool.gain_rates * pool.wealth, 0.0)

    if mode == "unit":
        group_gain = 1.0
    elif mode == "exact":
        forfeited = float(pool.wealth[deaths].sum())
        denominator = float(expected.sum())
        if denominator > 0:
            group_gain = forfeited / denominator
        elif forfeited > 0:
            raise GroupGainError("Forfeited wealth with no surviving members to credit")
        else:
            group_gain = 0.0
    else:
        raise ValidationError(f"Unknown group gain mode {mode!r}")

    return expected * group_gain, group_gain


@dataclass(frozen=True, eq=False)
class SmallBiasReport:
    ratios: np.ndarray
    flagged: np.ndarray
    threshold: float

    @property
    def any_flagged(self) -> bool:
        return bool(self.flagged.any())


def small_bias_check(pool: PoolState, threshold: float = 0.01) -> SmallBiasReport:
    """Share of each member's expected credit in the pool's expected forfeiture.

    Large shares mean a member's own death materially moves the group gain.
    """
    total = float((pool.delta * pool.wealth).sum())
    if total <= 0:
        ratios = np.full(pool.wealth.shape, np.inf)
    else:
        ratios = pool.gain_rates * pool.wealth / total
    return SmallBiasReport(ratios, ratios > threshold, threshold)

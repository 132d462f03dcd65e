"""Money-back guarantee pricing.

The guarantee pays the member's estate the shortfall of cumulative nominal
withdrawals below the purchase price ``L0`` when the member dies before the
horizon. It is priced ex post by Monte Carlo under a fixed policy; pricing
never alters the account or the decisions.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigurationError, PricingError, ValidationError
from .evaluation import Controller, rollout
from .helpers import DEATH_STREAM, path_chunks
from .market import PathSet
from .risk import upper_var_cvar
from .tontine import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MbgPricingConfig:
    """Pricing inputs.

    ``beta0`` is a notional starting payment rate used only to translate the
    load into a post-load rate for reporting.
    """

    L0: float = 1000.0
    alpha_g: float = 0.05
    lambda_: float = 0.5
    beta0: float = 0.04
    n_price_paths: int = 4096
    seed: int = 2

    def __post_init__(self):
        checks = (
            ("L0", self.L0 > 0, "must be positive"),
            ("alpha_g", 0.0 < self.alpha_g < 1.0, "must lie in (0, 1)"),
            ("lambda", self.lambda_ >= 0, "must be non-negative"),
            ("beta0", self.beta0 >= 0, "must be non-negative"),
            ("n_price_paths", self.n_price_paths >= 0, "must be non-negative"),
        )
        for name, ok, message in checks:
            if not ok:
                raise ConfigurationError(message, field=f"pricing.{name}")


def payout(L0: float, nominal_withdrawals_cum, cpi_ratio_at_death):
    """Real payout ``max(L0 - cum, 0) / CPI`` at the date of death."""
    cpi = np.asarray(cpi_ratio_at_death, dtype=float)
    if (cpi <= 0).any():
        raise ValidationError("CPI ratio must be positive")
    value = np.maximum(L0 - np.asarray(nominal_withdrawals_cum, dtype=float), 0.0) / cpi
    if np.ndim(value) == 0:
        return float(value)
    return value


def load_factor(e_hat: float, cvar_hat: float, L0: float, lambda_: float) -> float:
    """Equivalent load ``(E + lambda * CVaR) / L0``."""
    return (e_hat + lambda_ * cvar_hat) / L0


def draw_death_times(delta: np.ndarray, seed: int) -> np.ndarray:
    """Index ``m_tau`` of the decision time closing the interval of death.

    A member alive at ``t_m`` dies in ``(t_m, t_{m+1}]`` when ``U < delta_m``;
    the result is ``m + 1`` for the first such ``m`` and 0 for survivors.
    """
    n_paths, M = delta.shape
    death_times = np.zeros(n_paths, dtype=int)
    for rows, rng in path_chunks(seed, n_paths, DEATH_STREAM):
        died = rng.random((rows.stop - rows.start, M)) < delta[rows]
        first = np.argmax(died, axis=1)
        death_times[rows] = np.where(died.any(axis=1), first + 1, 0)
    return death_times


@dataclass(frozen=True, eq=False)
class PayoutSample:
    payouts: np.ndarray
    death_times: np.ndarray


def simulate_payouts(
    controller: Controller,
    paths: PathSet,
    scenario: ScenarioConfig,
    L0: float,
    seed: int,
    *,
    death_times: Optional[np.ndarray] = None,
) -> PayoutSample:
    """Payout on every path under a fixed policy.

    Withdrawals at ``t_0 .. t_{m_tau - 1}`` are accumulated in nominal terms
    and the shortfall is deflated with the CPI at ``t_{m_tau}``.

    :param death_times: Forced ``m_tau`` per path (0 = survives) instead of
        Bernoulli draws.
    """
    if paths.n_paths == 0:
        raise PricingError("No pricing paths")
    try:
        result = rollout(controller, paths, scenario)
    except ValidationError as ex:
        raise PricingError(f"Policy does not match the pricing scenario: {ex}") from ex

    M = paths.n_periods
    if death_times is None:
        death_times = draw_death_times(paths.delta, seed)
    else:
        death_times = np.asarray(death_times, dtype=int)
        if death_times.shape != (paths.n_paths,) or ((death_times < 0) | (death_times > M)).any():
            raise PricingError(f"Death times must be {paths.n_paths} indices in 0..{M}")

    nominal = result.withdrawals[:, :M] * paths.cpi_index[:, :M]
    cumulative = np.concatenate([np.zeros((paths.n_paths, 1)), np.cumsum(nominal, axis=1)], axis=1)
    rows = np.arange(paths.n_paths)
    died = death_times > 0
    payouts = np.zeros(paths.n_paths)
    payouts[died] = payout(
        L0,
        cumulative[rows[died], death_times[died]],
        paths.cpi_index[rows[died], death_times[died]],
    )
    return PayoutSample(payouts, death_times)


@dataclass(frozen=True)
class MbgQuote:
    e_hat: float
    cvar_hat: float
    var_hat: float
    f_hat: float
    post_load_rate: float
    post_load_bps: float
    trigger_rate: float
    death_rate: float
    n_paths: int
    L0: float
    alpha_g: float
    lambda_: float
    beta0: float

    def as_dict(self) -> dict:
        return {
            "e_hat": self.e_hat,
            "cvar_hat": self.cvar_hat,
            "var_hat": self.var_hat,
            "f_hat": self.f_hat,
            "post_load_rate": self.post_load_rate,
            "post_load_bps": self.post_load_bps,
            "trigger_rate": self.trigger_rate,
            "death_rate": self.death_rate,
            "n_paths": self.n_paths,
            "config": {
                "L0": self.L0,
                "alpha_g": self.alpha_g,
                "lambda": self.lambda_,
                "beta0": self.beta0,
            },
        }


def quote(sample: PayoutSample, pricing: MbgPricingConfig) -> MbgQuote:
    """Summarise a payout sample into a load quote."""
    payouts = sample.payouts
    if payouts.size == 0:
        raise PricingError("No pricing paths")
    e_hat = float(payouts.mean())
    var_hat, cvar_hat = upper_var_cvar(payouts, pricing.alpha_g)
    f_hat = load_factor(e_hat, cvar_hat, pricing.L0, pricing.lambda_)
    post_load_rate = (1.0 - f_hat) * pricing.beta0
    return MbgQuote(
        e_hat=e_hat,
        cvar_hat=cvar_hat,
        var_hat=var_hat,
        f_hat=f_hat,
        post_load_rate=post_load_rate,
        post_load_bps=post_load_rate * 1e4,
        trigger_rate=float((payouts > 0).mean()),
        death_rate=float((sample.death_times > 0).mean()),
        n_paths=int(payouts.size),
        L0=pricing.L0,
        alpha_g=pricing.alpha_g,
        lambda_=pricing.lambda_,
        beta0=pricing.beta0,
    )


def price(
    controller: Controller,
    paths: PathSet,
    scenario: ScenarioConfig,
    pricing: MbgPricingConfig,
    *,
    death_times: Optional[np.ndarray] = None,
):
    """Monte Carlo MBG quote over the first ``n_price_paths`` paths.

    :return: Tuple of :class:`MbgQuote` and the underlying :class:`PayoutSample`.
    """
    if pricing.n_price_paths == 0:
        raise PricingError("n_price_paths must be positive")
    if pricing.n_price_paths > paths.n_paths:
        raise PricingError(
            f"{pricing.n_price_paths} pricing paths requested; PathSet has {paths.n_paths}"
        )
    if pricing.n_price_paths < paths.n_paths:
        paths = paths.take(slice(0, pricing.n_price_paths))
    sample = simulate_payouts(
        controller, paths, scenario, pricing.L0, pricing.seed, death_times=death_times
    )
    result = quote(sample, pricing)
    log.info(
        "MBG quote: E %.2f, CVaR %.2f, load %.4f (trigger rate %.3f)",
        result.e_hat,
        result.cvar_hat,
        result.f_hat,
        result.trigger_rate,
    )
    return result, sample


def payout_histogram(payouts, bins: int = 50, *, conditional: bool = False) -> pd.DataFrame:
    """Histogram of payouts as ``bin_lo, bin_hi, count`` rows.

    :param conditional: Only count paths where the guarantee paid out.
    """
    payouts = np.asarray(payouts, dtype=float)
    if conditional:
        payouts = payouts[payouts > 0]
    if payouts.size == 0:
        return pd.DataFrame({"bin_lo": [], "bin_hi": [], "count": []})
    counts, edges = np.histogram(payouts, bins=bins)
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})


def sensitivity_grid(
    controllers: Mapping[float, Controller],
    paths: PathSet,
    scenario: ScenarioConfig,
    pricing: MbgPricingConfig,
    lambdas: Sequence[float] = (0.0, 0.5, 1.0),
    alpha_gs: Sequence[float] = (0.01, 0.05),
) -> pd.DataFrame:
    """Load factors for each trained policy and tail level, tabulated over ``lambdas``.

    One pricing run per ``(gamma, alpha_g)``; the load is linear in lambda
    with slope ``CVaR / L0``. Death draws are shared across cells.
    """
    if not controllers:
        raise PricingError("Sensitivity grid requires at least one policy")
    if pricing.n_price_paths < paths.n_paths:
        paths = paths.take(slice(0, pricing.n_price_paths))
    death_times = draw_death_times(paths.delta, pricing.seed)

    records = []
    for gamma, controller in controllers.items():
        sample = simulate_payouts(
            controller, paths, scenario, pricing.L0, pricing.seed, death_times=death_times
        )
        e_hat = float(sample.payouts.mean())
        for alpha_g in alpha_gs:
            _, cvar_hat = upper_var_cvar(sample.payouts, alpha_g)
            record = {"gamma": gamma, "alpha_g": alpha_g, "e_hat": e_hat, "cvar_hat": cvar_hat}
            for lambda_ in lambdas:
                record[f"f_lambda_{lambda_:g}"] = load_factor(e_hat, cvar_hat, pricing.L0, lambda_)
            records.append(record)
    return pd.DataFrame.from_records(records)

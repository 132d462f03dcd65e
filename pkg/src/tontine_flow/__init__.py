"""Decumulation optimisation for tontine accounts.

Neural withdrawal and allocation controls are trained on an expected
withdrawal / CVaR objective over simulated market and mortality scenarios,
and a money-back guarantee overlay is priced under the trained controls.
"""

from . import errors as exceptions
from .config import RunConfig, load_config, parse_config
from .evaluation import (
    ConstantRule,
    NeuralController,
    benchmark_search,
    evaluate,
    export_heatmap,
    rollout,
)
from .market import KouMarket, BootstrapMarket, PathSet, simulate_market
from .mbg import MbgPricingConfig, MbgQuote, price, sensitivity_grid
from .mortality import LifeTable, fit_cbd, fit_lc, simulate_deltas
from .policy import Policy, PolicyParams
from .risk import empirical_var_cvar, upper_var_cvar
from .tontine import ScenarioConfig
from .train import TrainConfig, sweep_frontier

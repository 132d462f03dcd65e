"""Long running statistical and end-to-end checks.

Run with ``pytest -m slow``.
"""
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tontine_flow import flows, mbg, risk, tontine
from tontine_flow.config import parse_config
from tontine_flow.evaluation import ConstantRule, benchmark_search
from tontine_flow.market import SYNTHETIC_STOCK, KouMarket, simulate_kou
from tontine_flow.mortality import (
    LcParams,
    LifeTable,
    TableMortality,
    load_life_table,
    simulate_deltas,
)
from tontine_flow.policy import Policy, init_params
from tontine_flow.tontine import ScenarioConfig
from tontine_flow.train import objective, sweep_frontier, train_point

pytestmark = pytest.mark.slow


class TestPoolAccounting:
    @pytest.mark.parametrize("members", (10, 100, 10_000))
    def test_budget_balance(self, members):
        rng = np.random.default_rng(members)
        pool = tontine.PoolState(rng.uniform(10, 1000, members), rng.uniform(0.005, 0.2, members))

        for _ in range(10_000):
            deaths = tontine.draw_deaths(pool, rng)
            if deaths.all():
                continue
            credits, _ = tontine.pool_credits(pool, deaths)
            forfeited = pool.wealth[deaths].sum()
            assert credits.sum() == pytest.approx(forfeited, rel=1e-9, abs=1e-9)

    def test_fairness(self):
        rng = np.random.default_rng(3)
        members, delta, wealth = 10_000, 0.02, 100.0
        pool = tontine.PoolState(np.full(members, wealth), np.full(members, delta))
        fair_credit = delta / (1 - delta) * wealth

        group_gains = np.empty(100_000)
        credits_on_survival = np.empty(group_gains.size)
        for idx in range(group_gains.size):
            deaths = tontine.draw_deaths(pool, rng)
            credits, group_gains[idx] = tontine.pool_credits(pool, deaths, mode="exact")
            credits_on_survival[idx] = credits[~deaths].mean()
            if idx % 1000 == 0:
                assert credits.sum() == pytest.approx(pool.wealth[deaths].sum(), rel=1e-9)
                assert (credits[deaths] == 0).all()

        standard_error = group_gains.std(ddof=1) / np.sqrt(group_gains.size)
        assert abs(group_gains.mean() - 1.0) < 3 * standard_error + 1e-12
        assert abs(group_gains.mean() - 1.0) < 0.02
        standard_error = credits_on_survival.std(ddof=1) / np.sqrt(credits_on_survival.size)
        assert abs(credits_on_survival.mean() - fair_credit) < 3 * standard_error + 1e-12

    def test_unit_group_gain_pays_fair_credit(self):
        rng = np.random.default_rng(5)
        pool = tontine.PoolState(np.full(10_000, 100.0), np.full(10_000, 0.02))

        for _ in range(100):
            deaths = tontine.draw_deaths(pool, rng)
            credits, group_gain = tontine.pool_credits(pool, deaths, mode="unit")

            assert group_gain == 1.0
            np.testing.assert_allclose(credits[~deaths], 0.02 / 0.98 * 100.0, rtol=1e-14)
            assert (credits[deaths] == 0).all()


class TestRockafellar:
    def test_consecutive_integers(self):
        var, cvar = risk.empirical_var_cvar(np.arange(1.0, 101.0), 0.05)

        assert cvar == 3.0
        assert var == 5.0

    def test_maximum_at_var(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            sample = rng.normal(rng.uniform(-100, 100), rng.uniform(1, 50), size=10_000)
            var, cvar = risk.empirical_var_cvar(sample, 0.05)
            ordered = np.sort(sample)
            position = np.searchsorted(ordered, var)

            at_var = risk.rockafellar_value(sample, 0.05, var)
            assert at_var == pytest.approx(cvar, abs=1e-9)
            for threshold in ordered[[position - 1, position + 1, 0, -1]]:
                assert risk.rockafellar_value(sample, 0.05, threshold) <= at_var + 1e-9


class TestGradients:
    STEP = 1e-6

    def _value(self, target, params, paths, scenario):
        return objective(target, params, paths, scenario).value

    def test_randomised_instances(self, random_paths):
        rng = np.random.default_rng(29)
        checked = 0
        for instance in range(50):
            M = int(rng.integers(1, 4))
            scenario = ScenarioConfig(
                W0=100.0,
                L0=100.0,
                T=M,
                M=M,
                q_min=4.0,
                q_max=8.0,
                varrho=0.001,
                mu_bc=0.02,
                alpha=0.25,
                gamma=float(rng.uniform(0.5, 2)),
            )
            hidden = tuple(int(width) for width in rng.integers(1, 5, size=rng.integers(1, 3)))
            target = Policy.for_scenario(scenario, hidden)
            params = init_params(target, seed=instance, w_star_fraction=float(rng.uniform(0.5, 1.1)))
            paths = random_paths(n_paths=int(rng.integers(2, 9)), M=M, seed=instance)

            result = objective(target, params, paths, scenario, with_gradients=True)
            if np.min(np.abs(result.terminal_wealth - params.w_star)) < 1e-3:
                continue

            for block in ("theta_q", "theta_p"):
                theta = getattr(params, block)
                numeric = np.empty_like(theta)
                for idx in range(len(theta)):
                    up, down = theta.copy(), theta.copy()
                    up[idx] += self.STEP
                    down[idx] -= self.STEP
                    numeric[idx] = (
                        self._value(target, replace(params, **{block: up}), paths, scenario)
                        - self._value(target, replace(params, **{block: down}), paths, scenario)
                    ) / (2 * self.STEP)
                np.testing.assert_allclose(
                    getattr(result.gradients, block), numeric, rtol=1e-4, atol=1e-6
                )
            checked += 1

        assert checked >= 40


class TestKouMoments:
    @pytest.mark.parametrize(
        "params, expected",
        (
            (SYNTHETIC_STOCK, np.exp(0.08912)),
            (replace(SYNTHETIC_STOCK, mu=0.0), 1.0),
        ),
    )
    def test_mean_gross_return(self, params, expected):
        paths = simulate_kou(KouMarket(stock=params), 1, 1_000_000, seed=123)

        gross = paths.gross[:, 0, 0]
        standard_error = gross.std(ddof=1) / np.sqrt(gross.size)
        assert abs(gross.mean() - expected) < 3 * standard_error


class TestGuaranteeOracle:
    def test_payouts_follow_death_schedule(self, make_paths):
        scenario = ScenarioConfig(varrho=0.0, mu_bc=0.0)
        paths = make_paths(n_paths=31, M=30)
        death_times = np.arange(31)

        sample = mbg.simulate_payouts(
            ConstantRule(40.0, (0.0, 1.0)), paths, scenario, 1000.0, seed=0, death_times=death_times
        )

        expected = np.where(death_times > 0, np.maximum(1000.0 - 40.0 * death_times, 0.0), 0.0)
        np.testing.assert_array_equal(sample.payouts, expected)

    def test_load_identity(self):
        assert round(mbg.load_factor(70.69, 758.28, 1000.0, 0.5), 2) == 0.45


@pytest.fixture(scope="module")
def validation_run():
    fixtures = Path(__file__).parent / "fixtures"
    return parse_config({"preset": "validation", "mortality": {"table": "gompertz_table.csv"}}, root=fixtures)


@pytest.fixture(scope="module")
def desk_paths(validation_run):
    scenario = validation_run.scenario
    table = TableMortality(load_life_table(validation_run.mortality.table))
    market = KouMarket()
    return tuple(
        simulate_kou(market, scenario.M, 4096, seed).with_deltas(
            simulate_deltas(table, scenario.x0, scenario.y0, scenario.M, 4096, seed)
        )
        for seed in (0, 1)
    )


class TestFrontier:
    def test_dominates_constant_benchmark(self, validation_run, desk_paths):
        train_paths, eval_paths = desk_paths
        scenario = validation_run.scenario
        assert scenario.varrho == pytest.approx(-np.expm1(-0.005))
        assert eval_paths.delta.min() > 0

        points = sweep_frontier(
            (0.2, 1.5), validation_run.train_config(), scenario, train_paths, eval_paths
        )
        benchmarks = [
            benchmark_search(eval_paths, scenario, 0.1, q) for q in np.arange(40.0, 80.1, 5.0)
        ]

        by_gamma = {point.gamma: point for point in points}
        assert set(by_gamma) == {0.2, 1.5}
        for point in points:
            assert point.ew_annualized > scenario.q_min
            # No constant rule with at least this tail wealth withdraws more
            for benchmark in benchmarks:
                if benchmark.cvar >= point.cvar_alpha:
                    assert point.ew_annualized >= benchmark.ew_annualized
        assert by_gamma[1.5].cvar_alpha >= benchmarks[0].cvar
        # Weight on the tail trades withdrawals for protection
        assert by_gamma[0.2].ew_annualized >= by_gamma[1.5].ew_annualized
        assert by_gamma[0.2].cvar_alpha <= by_gamma[1.5].cvar_alpha

    def test_improving_longevity_lowers_tail_wealth(self, validation_run, desk_paths):
        train_paths, eval_paths = desk_paths
        scenario = validation_run.scenario
        ages = np.arange(65, 95)
        log_rates = np.log(0.01) + 0.09 * (ages - 65)

        table = TableMortality(
            LifeTable(
                {
                    (int(age), year): float(-np.expm1(-np.exp(rate)))
                    for age, rate in zip(ages, log_rates)
                    for year in range(2022, 2052)
                }
            )
        )
        improving = LcParams(
            ages=ages,
            years=np.array([2020, 2021]),
            alpha=log_rates,
            beta=np.full(len(ages), 1 / len(ages)),
            kappa=np.zeros(2),
            drift=-1.0,
            sigma_kappa=0.1,
        )

        cvar = {}
        for name, model in (("table", table), ("lc", improving)):
            train_set = train_paths.with_deltas(simulate_deltas(model, 65, 2022, 30, 4096, 0))
            eval_set = eval_paths.with_deltas(simulate_deltas(model, 65, 2022, 30, 4096, 1))
            cvar[name] = train_point(
                1.5, validation_run.train_config(), scenario, train_set, eval_set
            ).cvar_alpha

        assert cvar["lc"] <= cvar["table"]


def test_desk_scale_run_is_deterministic(tmp_path):
    document = {
        "mortality": {"kind": "none"},
        "train": {"iterations": 200},
        "frontier": {"gammas": [0.5, 1.5]},
    }

    flows.run(parse_config(document), out_dir=tmp_path / "a")
    flows.run(parse_config(document), out_dir=tmp_path / "b")

    assert (tmp_path / "a" / "manifest.json").read_bytes() == (
        tmp_path / "b" / "manifest.json"
    ).read_bytes()

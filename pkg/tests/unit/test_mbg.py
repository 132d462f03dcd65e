import numpy as np
import pytest

from tontine_flow import mbg
from tontine_flow.errors import ConfigurationError, PricingError, ValidationError
from tontine_flow.evaluation import ConstantRule, NeuralController, rollout
from tontine_flow.policy import Policy, init_params
from tontine_flow.tontine import ScenarioConfig


@pytest.fixture
def scenario():
    return ScenarioConfig(varrho=0.0, mu_bc=0.0)


@pytest.fixture
def rule():
    return ConstantRule(40.0, (0.0, 1.0))


class TestPricingConfig:
    @pytest.mark.parametrize(
        "kwargs, field",
        (
            ({"alpha_g": 0.0}, "pricing.alpha_g"),
            ({"alpha_g": 1.0}, "pricing.alpha_g"),
            ({"lambda_": -0.1}, "pricing.lambda"),
            ({"L0": 0.0}, "pricing.L0"),
        ),
    )
    def test_invalid(self, kwargs, field):
        with pytest.raises(ConfigurationError) as result:
            mbg.MbgPricingConfig(**kwargs)

        assert result.value.field == field


class TestPayout:
    @pytest.mark.parametrize(
        "cum, cpi, expected",
        (
            (65.0, 1.0, 135.0),
            (65.0, 2.0, 67.5),
            (200.0, 1.0, 0.0),
            (250.0, 1.3, 0.0),
        ),
    )
    def test_payout(self, cum, cpi, expected):
        actual = mbg.payout(200.0, cum, cpi)

        assert isinstance(actual, float)
        assert actual == pytest.approx(expected)

    def test_vectorised(self):
        actual = mbg.payout(200.0, np.array([65.0, 300.0]), np.array([1.0, 1.0]))

        np.testing.assert_allclose(actual, [135.0, 0.0])

    def test_non_positive_cpi(self):
        with pytest.raises(ValidationError):
            mbg.payout(200.0, 65.0, 0.0)


def test_load_factor():
    actual = mbg.load_factor(70.69, 758.28, 1000.0, 0.5)

    assert actual == pytest.approx(0.44983)
    assert round(actual, 2) == 0.45


class TestDrawDeathTimes:
    def test_no_mortality(self):
        actual = mbg.draw_death_times(np.zeros((10, 5)), seed=0)

        np.testing.assert_array_equal(actual, 0)

    def test_certain_death_in_first_year(self):
        delta = np.zeros((4, 5))
        delta[:, 0] = 1.0 - 1e-12

        actual = mbg.draw_death_times(delta, seed=0)

        np.testing.assert_array_equal(actual, 1)

    def test_reproducible(self):
        delta = np.full((50, 10), 0.1)

        first = mbg.draw_death_times(delta, seed=3)
        again = mbg.draw_death_times(delta, seed=3)

        np.testing.assert_array_equal(first, again)
        assert ((first >= 0) & (first <= 10)).all()


class TestSimulatePayouts:
    def test_forced_death_after_first_withdrawal(self, scenario, rule, make_paths):
        paths = make_paths(n_paths=3, delta=0.01)

        actual = mbg.simulate_payouts(
            rule, paths, scenario, 1000.0, seed=0, death_times=np.ones(3, dtype=int)
        )

        np.testing.assert_allclose(actual.payouts, 960.0)

    def test_nominal_withdrawals_deflated(self, scenario, rule, make_paths):
        paths = make_paths(n_paths=1, cpi=2.0)

        actual = mbg.simulate_payouts(
            rule, paths, scenario, 1000.0, seed=0, death_times=np.array([3])
        )

        # t0 withdrawal at CPI 1, t1 and t2 at CPI 2; deflated by CPI 2 at t3
        assert actual.payouts[0] == pytest.approx((1000.0 - 40.0 - 80.0 - 80.0) / 2.0)

    def test_survivors_receive_nothing(self, scenario, rule, make_paths):
        actual = mbg.simulate_payouts(
            rule, make_paths(n_paths=2), scenario, 1000.0, seed=0, death_times=np.zeros(2, dtype=int)
        )

        np.testing.assert_array_equal(actual.payouts, 0.0)

    def test_invalid_death_times(self, scenario, rule, make_paths):
        with pytest.raises(PricingError, match="Death times"):
            mbg.simulate_payouts(
                rule, make_paths(n_paths=2), scenario, 1000.0, seed=0, death_times=np.array([31, 0])
            )

    def test_scenario_mismatch(self, scenario, rule, make_paths):
        with pytest.raises(PricingError, match="does not match"):
            mbg.simulate_payouts(rule, make_paths(M=3), scenario, 1000.0, seed=0)


class TestPrice:
    def test_no_mortality(self, scenario, rule, make_paths):
        pricing = mbg.MbgPricingConfig(n_price_paths=20)

        quote, _ = mbg.price(rule, make_paths(n_paths=20), scenario, pricing)

        assert (quote.e_hat, quote.cvar_hat, quote.f_hat) == (0.0, 0.0, 0.0)
        assert quote.death_rate == 0.0

    @pytest.mark.parametrize("lambda_", (0.0, 0.5, 1.0))
    def test_forced_death(self, scenario, rule, make_paths, lambda_):
        pricing = mbg.MbgPricingConfig(L0=1000.0, lambda_=lambda_, n_price_paths=8)

        quote, _ = mbg.price(
            rule, make_paths(n_paths=8), scenario, pricing, death_times=np.ones(8, dtype=int)
        )

        assert quote.e_hat == pytest.approx(960.0)
        assert quote.cvar_hat == pytest.approx(960.0)
        assert quote.f_hat == pytest.approx(0.96 * (1 + lambda_))
        assert quote.trigger_rate == 1.0

    def test_uses_leading_paths(self, scenario, rule, make_paths):
        pricing = mbg.MbgPricingConfig(n_price_paths=5)

        quote, sample = mbg.price(rule, make_paths(n_paths=9, delta=0.05), scenario, pricing)

        assert quote.n_paths == 5
        assert len(sample.payouts) == 5

    def test_too_many_paths_requested(self, scenario, rule, make_paths):
        with pytest.raises(PricingError, match="pricing paths requested"):
            mbg.price(rule, make_paths(n_paths=2), scenario, mbg.MbgPricingConfig(n_price_paths=3))

    def test_zero_paths_requested(self, scenario, rule, make_paths):
        with pytest.raises(PricingError, match="must be positive"):
            mbg.price(rule, make_paths(n_paths=2), scenario, mbg.MbgPricingConfig(n_price_paths=0))

    def test_account_unaffected(self, random_paths):
        scenario = ScenarioConfig(W0=100.0, L0=100.0, T=3, M=3, q_min=4.0, q_max=8.0)
        policy = Policy.for_scenario(scenario, (4,))
        controller = NeuralController(policy, init_params(policy, seed=2))
        paths = random_paths(n_paths=50, delta=0.1)
        gross, cpi_index = paths.gross.copy(), paths.cpi_index.copy()
        expected = rollout(controller, paths, scenario)

        mbg.price(controller, paths, scenario, mbg.MbgPricingConfig(L0=100.0, n_price_paths=50))
        actual = rollout(controller, paths, scenario)

        np.testing.assert_array_equal(actual.wealth_panel, expected.wealth_panel)
        np.testing.assert_array_equal(actual.withdrawals, expected.withdrawals)
        np.testing.assert_array_equal(paths.gross, gross)
        np.testing.assert_array_equal(paths.cpi_index, cpi_index)

    def test_post_load_rate(self):
        sample = mbg.PayoutSample(np.array([0.0, 100.0]), np.array([0, 2]))
        pricing = mbg.MbgPricingConfig(L0=1000.0, alpha_g=0.5, lambda_=1.0, beta0=0.04)

        actual = mbg.quote(sample, pricing)

        assert actual.f_hat == pytest.approx((50.0 + 100.0) / 1000.0)
        assert actual.post_load_bps == pytest.approx((1 - 0.15) * 0.04 * 1e4)
        assert actual.as_dict()["config"]["lambda"] == 1.0


class TestPayoutHistogram:
    def test_histogram(self):
        actual = mbg.payout_histogram([0.0, 0.0, 10.0, 20.0], bins=2)

        assert list(actual.columns) == ["bin_lo", "bin_hi", "count"]
        assert actual["count"].tolist() == [2, 2]

    def test_conditional(self):
        actual = mbg.payout_histogram([0.0, 0.0, 10.0, 20.0], bins=2, conditional=True)

        assert actual["count"].sum() == 2

    def test_empty(self):
        actual = mbg.payout_histogram([0.0], conditional=True)

        assert actual.empty


class TestSensitivityGrid:
    def test_linear_in_lambda(self, scenario, make_paths):
        controllers = {0.2: ConstantRule(40.0, (0.0, 1.0)), 1.5: ConstantRule(80.0, (0.0, 1.0))}
        pricing = mbg.MbgPricingConfig(n_price_paths=200)

        actual = mbg.sensitivity_grid(
            controllers, make_paths(n_paths=200, delta=0.05), scenario, pricing
        )

        assert len(actual) == 4
        assert list(actual.columns) == [
            "gamma", "alpha_g", "e_hat", "cvar_hat", "f_lambda_0", "f_lambda_0.5", "f_lambda_1",
        ]
        slope = actual["cvar_hat"] / pricing.L0
        np.testing.assert_allclose(actual["f_lambda_1"] - actual["f_lambda_0.5"], 0.5 * slope)
        np.testing.assert_allclose(actual["f_lambda_0"], actual["e_hat"] / pricing.L0)

    def test_higher_withdrawals_lower_expected_payout(self, scenario, make_paths):
        controllers = {0.2: ConstantRule(40.0, (0.0, 1.0)), 1.5: ConstantRule(80.0, (0.0, 1.0))}

        actual = mbg.sensitivity_grid(
            controllers, make_paths(n_paths=200, delta=0.05), scenario, mbg.MbgPricingConfig(n_price_paths=200)
        )

        e_hat = actual.groupby("gamma")["e_hat"].first()
        assert e_hat[1.5] < e_hat[0.2]

    def test_no_policies(self, scenario, make_paths):
        with pytest.raises(PricingError):
            mbg.sensitivity_grid({}, make_paths(), scenario, mbg.MbgPricingConfig())

import io

import numpy as np
import pytest
from scipy.special import expit

from tontine_flow import mortality
from tontine_flow.errors import CalibrationError, ParseError, TableRangeError, ValidationError

AGES = np.arange(60, 65)
YEARS = np.arange(2000, 2005)
LC_ALPHA = -5.0 + 0.1 * (AGES - 60)
LC_BETA = np.array([0.1, 0.15, 0.2, 0.25, 0.3])
LC_KAPPA = np.array([1.0, 0.5, 0.0, -0.5, -1.0])


def history_from_rates(rates: np.ndarray, ages=AGES, years=YEARS) -> mortality.MortalityHistory:
    exposure = np.full(rates.shape, 1e6)
    return mortality.MortalityHistory(np.asarray(ages), np.asarray(years), rates * exposure, exposure)


def history_from_q(q: np.ndarray, ages=AGES, years=YEARS) -> mortality.MortalityHistory:
    # Initial exposure E + D / 2 equal to one
    deaths = np.array(q, dtype=float)
    exposure = 1.0 - 0.5 * deaths
    return mortality.MortalityHistory(np.asarray(ages), np.asarray(years), deaths, exposure)


class TestLoadLifeTable:
    def test_csv(self, fixture_path):
        actual = mortality.load_life_table(fixture_path / "life_table.csv")

        assert len(actual) == 3
        assert actual.q(66, 2021) == 0.012

    def test_hmd_format(self, fixture_path):
        actual = mortality.load_life_table(fixture_path / "hmd_life_table.txt", rectangular=True)

        assert len(actual) == 4
        assert actual.ages == [65, 66]
        assert actual.years == [2020, 2021]
        assert actual.q(65, 2021) == pytest.approx(0.0099)

    def test_malformed_row(self, fixture_path):
        with pytest.raises(ParseError) as result:
            mortality.load_life_table(fixture_path / "bad_life_table.csv")

        assert result.value.line == 3

    def test_probability_out_of_range(self):
        source = io.StringIO("year,age,qx\n2020,65,0.01\n2021,66,1.2\n")

        with pytest.raises(ValidationError, match="outside"):
            mortality.load_life_table(source)

    def test_duplicate_cell(self):
        source = io.StringIO("year,age,qx\n2020,65,0.01\n2020,65,0.02\n")

        with pytest.raises(ValidationError, match="duplicate"):
            mortality.load_life_table(source)

    def test_rectangular__where_cells_missing(self, fixture_path):
        with pytest.raises(ValidationError, match="missing cells"):
            mortality.load_life_table(fixture_path / "life_table.csv", rectangular=True)


class TestTableDeltas:
    @pytest.fixture
    def table(self, fixture_path):
        return mortality.load_life_table(fixture_path / "life_table.csv")

    def test_diagonal(self, table):
        actual = mortality.table_deltas(table, 65, 2020, 3)

        np.testing.assert_array_equal(actual, [0.01, 0.012, 0.015])

    def test_outside_table(self, table):
        with pytest.raises(TableRangeError) as result:
            mortality.table_deltas(table, 65, 2020, 4)

        assert result.value.cell == (68, 2023)

    def test_constant_table(self):
        table = mortality.LifeTable.constant(0.02, range(65, 95), range(2022, 2052))

        actual = mortality.table_deltas(table, 65, 2022, 30)

        np.testing.assert_array_equal(actual, np.full(30, 0.02))

    def test_period_table(self):
        table = mortality.LifeTable({(65, 2020): 0.01, (66, 2020): 0.02})

        actual = mortality.table_deltas(table, 65, 2020, 2, period=True)

        np.testing.assert_array_equal(actual, [0.01, 0.02])


class TestLoadHistory:
    def test_window(self):
        source = io.StringIO(
            "year,age,deaths,exposure\n"
            "2000,60,10,1000\n2000,61,12,1000\n2001,60,9,1000\n2001,61,11,1000\n"
            "2000,99,50,100\n"
        )

        actual = mortality.load_history(source, ages=(60, 61), years=(2000, 2001))

        np.testing.assert_array_equal(actual.ages, [60, 61])
        np.testing.assert_array_equal(actual.deaths, [[10, 9], [12, 11]])

    def test_gap(self):
        source = io.StringIO(
            "year,age,deaths,exposure\n2000,60,10,1000\n2000,61,12,1000\n2001,60,9,1000\n"
        )

        with pytest.raises(ValidationError, match=r"no record for \(61, 2001\)"):
            mortality.load_history(source, ages=None, years=None)


class TestFitLc:
    def test_recovers_generator(self):
        rates = np.exp(LC_ALPHA[:, None] + LC_BETA[:, None] * LC_KAPPA[None, :])

        actual = mortality.fit_lc(history_from_rates(rates))

        np.testing.assert_allclose(actual.alpha, LC_ALPHA, atol=1e-8)
        np.testing.assert_allclose(actual.beta, LC_BETA, atol=1e-8)
        np.testing.assert_allclose(actual.kappa, LC_KAPPA, atol=1e-8)
        assert actual.drift == pytest.approx(-0.5)

    def test_constant_kappa(self):
        rates = np.exp(np.tile(LC_ALPHA[:, None], (1, len(YEARS))))

        actual = mortality.fit_lc(history_from_rates(rates))

        assert actual.drift == 0.0
        assert actual.sigma_kappa == 0.0
        np.testing.assert_allclose(actual.beta, 1 / len(AGES))

    def test_rank_one_uniform_beta(self):
        beta = np.full(len(AGES), 1 / len(AGES))
        rates = np.exp(LC_ALPHA[:, None] + beta[:, None] * LC_KAPPA[None, :])

        actual = mortality.fit_lc(history_from_rates(rates))

        np.testing.assert_allclose(actual.beta, beta, atol=1e-8)

    def test_zero_death_rate(self):
        rates = np.exp(np.tile(LC_ALPHA[:, None], (1, len(YEARS))))
        rates[2, 3] = 0.0

        with pytest.raises(CalibrationError, match=r"\(62, 2003\).*smoothing"):
            mortality.fit_lc(history_from_rates(rates))

    def test_logit_link(self):
        q = expit(LC_ALPHA[:, None] + LC_BETA[:, None] * LC_KAPPA[None, :])

        actual = mortality.fit_lc(history_from_q(q), link="logit")

        np.testing.assert_allclose(actual.kappa, LC_KAPPA, atol=1e-8)
        assert actual.link == "logit"


class TestFitCbd:
    def test_recovers_generator(self):
        xbar = AGES.mean()
        q = np.tile(expit(-4.0 + 0.1 * (AGES - xbar))[:, None], (1, len(YEARS)))

        actual = mortality.fit_cbd(history_from_q(q))

        np.testing.assert_allclose(actual.kappa1, -4.0, atol=1e-8)
        np.testing.assert_allclose(actual.kappa2, 0.1, atol=1e-8)
        np.testing.assert_allclose(actual.drift, 0.0, atol=1e-8)
        np.testing.assert_allclose(actual.cov, 0.0, atol=1e-12)

    def test_single_age(self):
        q = np.full((1, len(YEARS)), 0.02)

        with pytest.raises(CalibrationError, match="two distinct ages"):
            mortality.fit_cbd(history_from_q(q, ages=[65]))

    def test_probability_of_zero(self):
        q = np.full((len(AGES), len(YEARS)), 0.02)
        q[0, 0] = 0.0

        with pytest.raises(CalibrationError, match=r"\(60, 2000\)"):
            mortality.fit_cbd(history_from_q(q))


class TestSimulateDeltas:
    @pytest.fixture
    def lc_params(self):
        return mortality.LcParams(
            ages=AGES,
            years=YEARS,
            alpha=LC_ALPHA,
            beta=LC_BETA,
            kappa=LC_KAPPA,
            drift=-0.5,
            sigma_kappa=0.0,
        )

    def test_table_model(self, fixture_path):
        table = mortality.load_life_table(fixture_path / "life_table.csv")

        actual = mortality.simulate_deltas(mortality.TableMortality(table), 65, 2020, 3, 5, seed=0)

        assert actual.delta.shape == (5, 3)
        np.testing.assert_array_equal(actual.delta, np.tile([0.01, 0.012, 0.015], (5, 1)))

    def test_lc_without_noise(self, lc_params):
        actual = mortality.simulate_deltas(lc_params, 60, 2003, 4, 3, seed=0)

        kappa = np.array([-0.5, -1.0, -1.5, -2.0])
        expected = -np.expm1(-np.exp(LC_ALPHA[:4] + LC_BETA[:4] * kappa))
        np.testing.assert_allclose(actual.delta, np.tile(expected, (3, 1)), rtol=1e-12)

    def test_lc_seeds(self, lc_params):
        noisy = mortality.LcParams(**{**lc_params.__dict__, "sigma_kappa": 0.2})

        first = mortality.simulate_deltas(noisy, 60, 2003, 4, 10, seed=1)
        again = mortality.simulate_deltas(noisy, 60, 2003, 4, 10, seed=1)
        other = mortality.simulate_deltas(noisy, 60, 2003, 4, 10, seed=2)

        np.testing.assert_array_equal(first.delta, again.delta)
        assert not np.array_equal(first.delta, other.delta)

    def test_lc_improving_longevity(self, lc_params):
        # Flat in age, so the cohort diagonal tracks a fixed age
        flat = mortality.LcParams(
            **{
                **lc_params.__dict__,
                "alpha": np.full(len(AGES), -4.0),
                "beta": np.full(len(AGES), 0.2),
                "sigma_kappa": 0.3,
            }
        )

        actual = mortality.simulate_deltas(flat, 60, 2004, 5, 5_000, seed=3)

        mean_delta = actual.delta.mean(axis=0)
        assert (np.diff(mean_delta) <= 0).all()
        assert mean_delta[-1] < mean_delta[0]

    def test_lc_age_outside_fit(self, lc_params):
        with pytest.raises(TableRangeError):
            mortality.simulate_deltas(lc_params, 62, 2003, 4, 1, seed=0)

    def test_cbd(self):
        params = mortality.CbdParams(
            years=YEARS,
            kappa1=np.full(len(YEARS), -4.0),
            kappa2=np.full(len(YEARS), 0.1),
            drift=np.zeros(2),
            cov=np.zeros((2, 2)),
            xbar=62.0,
        )

        actual = mortality.simulate_deltas(params, 62, 2004, 3, 2, seed=0)

        np.testing.assert_allclose(actual.delta, expit(-4.0 + 0.1 * np.arange(3))[None, :].repeat(2, 0))

    def test_clamped(self, lc_params, caplog):
        extreme = mortality.LcParams(**{**lc_params.__dict__, "alpha": np.full(len(AGES), -40.0)})

        actual = mortality.simulate_deltas(extreme, 60, 2003, 2, 1, seed=0)

        np.testing.assert_array_equal(actual.delta, mortality.Q_EPSILON)
        assert "Clamped" in caplog.text


def test_gain_rates():
    np.testing.assert_allclose(mortality.gain_rates([0.0, 0.5, 0.02]), [0.0, 1.0, 0.02 / 0.98])


def test_gain_rates__inverse_and_monotone():
    delta = np.linspace(0.0, 0.999, 2_000)

    actual = mortality.gain_rates(delta)

    np.testing.assert_allclose(actual / (1 + actual), delta, rtol=0, atol=1e-14)
    assert (np.diff(actual) > 0).all()


def test_gain_rates__outside_unit_interval():
    with pytest.raises(ValidationError):
        mortality.gain_rates([0.1, 1.0])

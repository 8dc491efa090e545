"""Pricer validity tests: closed form vs Monte Carlo, LSMC vs binomial tree."""

import math

import numpy as np
import pytest

from ttsurrogate.errors import DimensionMismatchError
from ttsurrogate.grid import Feature, FeatureGrid
from ttsurrogate.market import (
    AmericanBasketLsmcGridPricer,
    BasketModelParams,
    EuropeanGeoBasketGridPricer,
    LsmcConfig,
    MarketPoint,
    binomial_tree_american_put,
    geo_basket_put_batch,
    lsmc_price_and_stderr,
    price_american_arith_basket_put_lsmc,
    price_european_geo_basket_put,
    simulate_gbm_paths,
)


def terminal_mc_put(point, params, n, seed):
    """Independent oracle: discounted payoff over exact terminal samples."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, params.n_assets)) @ params._factor.T
    sig = params.volatilities
    st = np.asarray(point.spots) * np.exp(
        (point.rate - params.dividends - sig**2 / 2) * point.ttm
        + sig * math.sqrt(point.ttm) * z
    )
    g = np.exp(np.mean(np.log(st), axis=1))
    pay = math.exp(-point.rate * point.ttm) * np.maximum(point.strike - g, 0)
    return pay.mean(), pay.std(ddof=1) / math.sqrt(n)


class TestEuropeanGeoBasket:
    def test_expiry_limit(self):
        params = BasketModelParams.default(3)
        point = MarketPoint((80.0, 90.0, 100.0), 120.0, 0.05, 1e-12)
        g0 = (80 * 90 * 100) ** (1 / 3)
        assert price_european_geo_basket_put(point, params) == pytest.approx(
            120.0 - g0, rel=1e-9
        )

    def test_zero_vol_deterministic_forward(self):
        params = BasketModelParams(
            np.array([1e-9, 1e-9]), np.eye(2), np.zeros(2)
        )
        point = MarketPoint((90.0, 110.0), 120.0, 0.04, 2.0)
        g0 = math.sqrt(90 * 110)
        drift = 0.04  # vol terms vanish
        want = math.exp(-0.04 * 2) * max(120.0 - g0 * math.exp(drift * 2), 0.0)
        assert price_european_geo_basket_put(point, params) == pytest.approx(want, rel=1e-6)

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(1)
        params = BasketModelParams.default(5)
        for _ in range(5):
            point = MarketPoint(
                tuple(rng.uniform(5, 150, 5)),
                rng.uniform(20, 200),
                rng.uniform(0.005, 0.08),
                rng.uniform(0.1, 3),
            )
            cf = price_european_geo_basket_put(point, params)
            mc, se = terminal_mc_put(point, params, 200_000, 99)
            assert abs(cf - mc) <= 3 * se + 1e-12

    def test_monotonicity(self):
        params = BasketModelParams.default(2)
        strikes = np.linspace(50, 150, 8)
        prices = [
            price_european_geo_basket_put(MarketPoint((100.0, 100.0), k, 0.03, 1.0), params)
            for k in strikes
        ]
        assert all(p2 >= p1 - 1e-12 for p1, p2 in zip(prices, prices[1:]))
        spots = np.linspace(60, 140, 8)
        prices = [
            price_european_geo_basket_put(MarketPoint((s, s), 100.0, 0.03, 1.0), params)
            for s in spots
        ]
        assert all(p2 <= p1 + 1e-12 for p1, p2 in zip(prices, prices[1:]))

    def test_bounds(self):
        params = BasketModelParams.default(2)
        point = MarketPoint((100.0, 80.0), 110.0, 0.05, 1.5)
        p = price_european_geo_basket_put(point, params)
        assert 0.0 <= p <= 110.0 * math.exp(-0.05 * 1.5)

    def test_invalid_inputs(self):
        params = BasketModelParams.default(2)
        with pytest.raises(ValueError):
            MarketPoint((0.0, 100.0), 100.0, 0.05, 1.0)
        with pytest.raises(ValueError):
            geo_basket_put_batch(
                np.array([[100.0, 100.0]]), np.array([-5.0]), np.array([0.05]),
                np.array([1.0]), params,
            )


class TestGbmPaths:
    def test_zero_vol_forward(self):
        params = BasketModelParams(np.array([1e-12, 1e-12]), np.eye(2), np.array([0.01, 0.02]))
        point = MarketPoint((100.0, 50.0), 100.0, 0.05, 2.0)
        paths = simulate_gbm_paths(point, params, LsmcConfig(4, 8, seed=0))
        t = np.linspace(0, 2.0, 9)
        want0 = 100.0 * np.exp((0.05 - 0.01) * t)
        want1 = 50.0 * np.exp((0.05 - 0.02) * t)
        np.testing.assert_allclose(paths[:, :, 0], np.broadcast_to(want0, (4, 9)), rtol=1e-6)
        np.testing.assert_allclose(paths[:, :, 1], np.broadcast_to(want1, (4, 9)), rtol=1e-6)

    def test_martingale(self):
        params = BasketModelParams.default(2)
        point = MarketPoint((100.0, 120.0), 100.0, 0.04, 1.0)
        paths = simulate_gbm_paths(point, params, LsmcConfig(100_000, 4, seed=7))
        discounted = paths[:, -1, :] * math.exp(-0.04 * 1.0)
        for i, s0 in enumerate(point.spots):
            mean = discounted[:, i].mean()
            se = discounted[:, i].std(ddof=1) / math.sqrt(100_000)
            assert abs(mean - s0) <= 3 * se

    def test_seed_determinism_bit_exact(self):
        params = BasketModelParams.default(3)
        point = MarketPoint((90.0, 100.0, 110.0), 100.0, 0.02, 0.5)
        a = simulate_gbm_paths(point, params, LsmcConfig(50, 6, seed=123))
        b = simulate_gbm_paths(point, params, LsmcConfig(50, 6, seed=123))
        assert np.array_equal(a, b)

    def test_non_psd_correlation_rejected(self):
        bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(ValueError):
            BasketModelParams(np.full(3, 0.2), bad)


class TestLsmc:
    def test_one_step_is_european(self):
        params = BasketModelParams.default(2)
        point = MarketPoint((90.0, 110.0), 105.0, 0.03, 1 / 365)
        cfg = LsmcConfig(20_000, 1, seed=3)
        lsmc = price_american_arith_basket_put_lsmc(point, params, cfg)
        paths = simulate_gbm_paths(point, params, cfg)
        payoff = np.maximum(105.0 - paths[:, -1, :].mean(axis=1), 0.0)
        euro = math.exp(-0.03 / 365) * payoff
        se = euro.std(ddof=1) / math.sqrt(len(euro))
        assert abs(lsmc - euro.mean()) <= 3 * se + 1e-12

    def test_early_exercise_dominance(self):
        # American vs European on the same arithmetic payoff, matched paths
        params = BasketModelParams.default(2)
        point = MarketPoint((100.0, 95.0), 105.0, 0.05, 1.0)
        cfg = LsmcConfig(20_000, 30, seed=4)
        am = price_american_arith_basket_put_lsmc(point, params, cfg)
        paths = simulate_gbm_paths(point, params, cfg)
        euro = math.exp(-0.05) * np.maximum(105.0 - paths[:, -1, :].mean(axis=1), 0.0)
        se = euro.std(ddof=1) / math.sqrt(len(euro))
        assert am >= euro.mean() - 2 * se

    def test_degenerate_basket_matches_binomial_tree(self):
        # perfectly correlated identical assets collapse to one underlying
        params = BasketModelParams(
            np.array([0.2, 0.2]), np.array([[1.0, 1.0], [1.0, 1.0]])
        )
        point = MarketPoint((100.0, 100.0), 100.0, 0.05, 1.0)
        lsmc = price_american_arith_basket_put_lsmc(
            point, params, LsmcConfig(100_000, 50, seed=0)
        )
        tree = binomial_tree_american_put(100.0, 100.0, 0.05, 0.0, 0.2, 1.0, 1000)
        assert abs(lsmc - tree) / tree < 0.01

    def test_seed_determinism(self):
        params = BasketModelParams.default(2)
        point = MarketPoint((100.0, 90.0), 95.0, 0.02, 0.8)
        cfg = LsmcConfig(2_000, 10, seed=11)
        a = price_american_arith_basket_put_lsmc(point, params, cfg)
        b = price_american_arith_basket_put_lsmc(point, params, cfg)
        assert a == b

    def test_never_itm_does_not_crash(self):
        params = BasketModelParams.default(2)
        point = MarketPoint((100.0, 100.0), 1.0, 0.05, 0.5)  # hopeless put
        p = price_american_arith_basket_put_lsmc(point, params, LsmcConfig(500, 5, seed=0))
        assert p == pytest.approx(0.0, abs=1e-12)

    def test_bounds(self):
        params = BasketModelParams.default(2)
        point = MarketPoint((50.0, 60.0), 150.0, 0.05, 2.0)
        p, se = lsmc_price_and_stderr(point, params, LsmcConfig(5_000, 20, seed=5))
        assert 0.0 <= p <= 150.0
        assert se > 0


class TestBinomialTree:
    def test_expiry_payoff(self):
        assert binomial_tree_american_put(80.0, 100.0, 0.05, 0.0, 0.2, 0.0, 10) == 20.0

    def test_dominates_european(self):
        # single-asset European put via the geometric pricer with one asset
        params = BasketModelParams(np.array([0.25]), np.eye(1))
        point = MarketPoint((95.0,), 100.0, 0.06, 1.0)
        euro = price_european_geo_basket_put(point, params)
        amer = binomial_tree_american_put(95.0, 100.0, 0.06, 0.0, 0.25, 1.0, 500)
        assert amer >= euro - 1e-9

    def test_step_convergence(self):
        p1 = binomial_tree_american_put(100.0, 100.0, 0.05, 0.0, 0.2, 1.0, 1000)
        p2 = binomial_tree_american_put(100.0, 100.0, 0.05, 0.0, 0.2, 1.0, 2000)
        assert abs(p1 - p2) < 1e-3

    def test_intrinsic_floor(self):
        p = binomial_tree_american_put(60.0, 100.0, 0.08, 0.0, 0.2, 2.0, 400)
        assert p >= 40.0


class TestGridAdapters:
    @pytest.fixture
    def grid2(self):
        return FeatureGrid(
            [
                Feature("spot1", 5.0, 150.0, 3),
                Feature("spot2", 5.0, 150.0, 3),
                Feature("strike", 1.0, 200.0, 3),
                Feature("rate", 0.005, 0.08, 2),
                Feature("ttm", 1 / 365, 3.0, 2),
            ]
        )

    def test_european_adapter_matches_pointwise(self, grid2):
        params = BasketModelParams.default(2)
        pricer = EuropeanGeoBasketGridPricer(grid2, params)
        rng = np.random.default_rng(6)
        idx = rng.integers(0, 2, size=(20, grid2.total_cores))
        got = pricer.eval_batch(idx)
        coords = grid2.points_of_bits(idx)
        for row, c in zip(got, coords):
            point = MarketPoint((c[0], c[1]), c[2], c[3], c[4])
            assert row == pytest.approx(price_european_geo_basket_put(point, params))
        assert pricer.eval_count == 20

    def test_lsmc_adapter_deterministic_per_index(self, grid2):
        params = BasketModelParams.default(2)
        pricer = AmericanBasketLsmcGridPricer(
            grid2, params, LsmcConfig(200, 5), base_seed=9
        )
        idx = np.array([[0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0]])
        v1 = pricer.eval_batch(idx)[0]
        v2 = pricer.eval_batch(idx)[0]
        assert v1 == v2
        other = AmericanBasketLsmcGridPricer(
            grid2, params, LsmcConfig(200, 5), base_seed=10
        )
        assert other.eval_batch(idx)[0] != v1

    def test_lsmc_adapter_threads_match_serial(self, grid2):
        params = BasketModelParams.default(2)
        serial = AmericanBasketLsmcGridPricer(grid2, params, LsmcConfig(100, 4), 3, 1)
        threaded = AmericanBasketLsmcGridPricer(grid2, params, LsmcConfig(100, 4), 3, 4)
        rng = np.random.default_rng(8)
        idx = rng.integers(0, 2, size=(12, grid2.total_cores))
        np.testing.assert_array_equal(serial.eval_batch(idx), threaded.eval_batch(idx))

    def test_feature_count_validated(self):
        grid = FeatureGrid([Feature("x", 0.0, 1.0, 2)])
        with pytest.raises(DimensionMismatchError):
            EuropeanGeoBasketGridPricer(grid, BasketModelParams.default(2))

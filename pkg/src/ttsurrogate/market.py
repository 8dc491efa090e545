"""Basket option pricers used as ground truth and as training targets.

Covers the closed-form European put on a geometric basket average, exact-
scheme GBM path generation, Longstaff-Schwartz regression Monte Carlo for
the American put on an arithmetic average, and a CRR binomial tree for
single-asset cross-checks.  Grid adapters expose the pricers through the
black-box contract used by the cross sweeps, with one derived seed per
multi-index so stochastic prices are deterministic tensor entries.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .cross import BlackBoxPricer
from .errors import DimensionMismatchError
from .grid import FeatureGrid

_TINY_VOL = 1e-14


@dataclass(frozen=True)
class MarketPoint:
    """One pricing query: per-asset spots plus contract terms."""

    spots: tuple[float, ...]
    strike: float
    rate: float
    ttm: float

    def __post_init__(self):
        object.__setattr__(self, "spots", tuple(float(s) for s in np.atleast_1d(self.spots)))
        if any(s <= 0 for s in self.spots) or self.strike <= 0:
            raise ValueError("spots and strike must be positive")
        if self.ttm < 0:
            raise ValueError("time to maturity must be nonnegative")

    @property
    def n_assets(self) -> int:
        return len(self.spots)


@dataclass
class BasketModelParams:
    """Annualized volatilities, correlation, and dividend yields."""

    volatilities: np.ndarray
    correlation: np.ndarray
    dividends: np.ndarray = None

    def __post_init__(self):
        self.volatilities = np.atleast_1d(np.asarray(self.volatilities, dtype=np.float64))
        m = self.volatilities.size
        self.correlation = np.asarray(self.correlation, dtype=np.float64)
        if self.correlation.shape != (m, m):
            raise DimensionMismatchError("correlation must be m x m")
        if not np.allclose(self.correlation, self.correlation.T, atol=1e-12):
            raise ValueError("correlation must be symmetric")
        if not np.allclose(np.diag(self.correlation), 1.0, atol=1e-12):
            raise ValueError("correlation needs a unit diagonal")
        if np.any(self.volatilities <= 0):
            raise ValueError("volatilities must be positive")
        if self.dividends is None:
            self.dividends = np.zeros(m)
        else:
            self.dividends = np.atleast_1d(np.asarray(self.dividends, dtype=np.float64))
        eig, vec = np.linalg.eigh(self.correlation)
        if eig.min() < -1e-10:
            raise ValueError(f"correlation is not positive semidefinite (min eig {eig.min():.2e})")
        # PSD square root tolerates perfectly correlated (singular) baskets
        self._factor = vec * np.sqrt(np.clip(eig, 0.0, None))

    @property
    def n_assets(self) -> int:
        return self.volatilities.size

    @staticmethod
    def default(n_assets: int, vol: float = 0.2, corr: float = 0.5) -> "BasketModelParams":
        rho = np.full((n_assets, n_assets), corr)
        np.fill_diagonal(rho, 1.0)
        return BasketModelParams(np.full(n_assets, vol), rho, np.zeros(n_assets))

    def to_json(self) -> dict:
        return {
            "volatilities": self.volatilities.tolist(),
            "correlation": self.correlation.tolist(),
            "dividends": self.dividends.tolist(),
        }


@dataclass(frozen=True)
class LsmcConfig:
    n_paths: int = 10_000
    n_steps: int = 30
    basis_degree: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 2 or self.n_steps < 1:
            raise ValueError("need n_paths >= 2 and n_steps >= 1")


# ---------------------------------------------------------------------------
# European put on the geometric basket average (closed form)
# ---------------------------------------------------------------------------

def geo_basket_put_batch(spots: np.ndarray, strike: np.ndarray, rate: np.ndarray,
                         ttm: np.ndarray, params: BasketModelParams) -> np.ndarray:
    """Vectorized closed-form price; ``spots`` has shape (B, m).

    The geometric average of jointly lognormal assets is itself lognormal
    with variance v^T rho v / m^2 and log-drift mean(r - q - sigma^2/2), so
    the put collapses to a one-dimensional Black-Scholes formula.
    """
    spots = np.atleast_2d(np.asarray(spots, dtype=np.float64))
    b = spots.shape[0]
    strike = np.broadcast_to(np.asarray(strike, dtype=np.float64), (b,))
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), (b,))
    ttm = np.broadcast_to(np.asarray(ttm, dtype=np.float64), (b,))
    if np.any(spots <= 0) or np.any(strike <= 0):
        raise ValueError("spots and strikes must be positive")
    m = params.n_assets
    if spots.shape[1] != m:
        raise DimensionMismatchError(f"expected {m} spots per row")
    sig = params.volatilities
    var_g = float(sig @ params.correlation @ sig) / m**2
    g0 = np.exp(np.mean(np.log(spots), axis=1))
    drift = (rate - np.mean(params.dividends) - np.mean(sig**2) / 2.0) + var_g / 2.0
    fwd = g0 * np.exp(drift * ttm)
    disc = np.exp(-rate * ttm)
    vol_t = np.sqrt(var_g * ttm)
    out = np.empty_like(fwd)
    degenerate = vol_t < _TINY_VOL
    if np.any(degenerate):
        out[degenerate] = disc[degenerate] * np.maximum(
            strike[degenerate] - fwd[degenerate], 0.0
        )
    live = ~degenerate
    if np.any(live):
        d1 = (np.log(fwd[live] / strike[live]) + 0.5 * vol_t[live] ** 2) / vol_t[live]
        d2 = d1 - vol_t[live]
        out[live] = disc[live] * (
            strike[live] * norm.cdf(-d2) - fwd[live] * norm.cdf(-d1)
        )
    return out


def price_european_geo_basket_put(point: MarketPoint, params: BasketModelParams) -> float:
    return float(
        geo_basket_put_batch(
            np.array(point.spots)[None, :],
            np.array([point.strike]),
            np.array([point.rate]),
            np.array([point.ttm]),
            params,
        )[0]
    )


# ---------------------------------------------------------------------------
# GBM paths and Longstaff-Schwartz
# ---------------------------------------------------------------------------

def simulate_gbm_paths(point: MarketPoint, params: BasketModelParams,
                       cfg: LsmcConfig) -> np.ndarray:
    """Exact-scheme lognormal paths, shape (n_paths, n_steps + 1, m)."""
    m = params.n_assets
    if point.n_assets != m:
        raise DimensionMismatchError("spot count does not match model size")
    rng = np.random.default_rng(cfg.seed)
    dt = point.ttm / cfg.n_steps
    z = rng.standard_normal((cfg.n_paths, cfg.n_steps, m))
    shocks = z @ params._factor.T
    sig = params.volatilities
    drift = (point.rate - params.dividends - 0.5 * sig**2) * dt
    log_inc = drift + sig * math.sqrt(dt) * shocks
    log_paths = np.cumsum(log_inc, axis=1)
    paths = np.empty((cfg.n_paths, cfg.n_steps + 1, m))
    paths[:, 0, :] = point.spots
    paths[:, 1:, :] = np.asarray(point.spots) * np.exp(log_paths)
    return paths


def _lsmc_cashflows(point: MarketPoint, params: BasketModelParams,
                    cfg: LsmcConfig) -> np.ndarray:
    """Discounted exercise cash flows per path at t=0."""
    paths = simulate_gbm_paths(point, params, cfg)
    avg = paths.mean(axis=2)
    k = point.strike
    dt = point.ttm / cfg.n_steps
    disc = math.exp(-point.rate * dt)
    cash = np.maximum(k - avg[:, -1], 0.0)
    for t in range(cfg.n_steps - 1, 0, -1):
        cash *= disc
        payoff = k - avg[:, t]
        itm = payoff > 0
        if not np.any(itm):
            continue
        # scaled moneyness keeps the cubic design matrix well conditioned
        a = avg[itm, t] / k
        design = np.column_stack(
            [a**p for p in range(cfg.basis_degree + 1)] + [payoff[itm] / k]
        )
        beta = np.linalg.lstsq(design, cash[itm], rcond=None)[0]
        continuation = design @ beta
        exercise = payoff[itm] >= continuation
        cash[itm] = np.where(exercise, payoff[itm], cash[itm])
    return cash * disc


def lsmc_price_and_stderr(point: MarketPoint, params: BasketModelParams,
                          cfg: LsmcConfig) -> tuple[float, float]:
    cash = _lsmc_cashflows(point, params, cfg)
    return float(cash.mean()), float(cash.std(ddof=1) / math.sqrt(len(cash)))


def price_american_arith_basket_put_lsmc(point: MarketPoint, params: BasketModelParams,
                                         cfg: LsmcConfig) -> float:
    """Longstaff-Schwartz value of the American put on the arithmetic average.

    Backward induction regresses discounted continuation values on a scaled
    polynomial basis of the basket average (plus the payoff) over in-the-money
    paths; the price is the mean discounted cash flow of the induced exercise
    rule.  Deterministic for a fixed config seed.
    """
    return float(_lsmc_cashflows(point, params, cfg).mean())


def binomial_tree_american_put(spot: float, strike: float, rate: float, dividend: float,
                               vol: float, ttm: float, steps: int) -> float:
    """CRR backward induction with early exercise on a recombining tree."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if ttm <= 0:
        return max(strike - spot, 0.0)
    dt = ttm / steps
    u = math.exp(vol * math.sqrt(dt))
    d = 1.0 / u
    growth = math.exp((rate - dividend) * dt)
    p = (growth - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise ValueError("tree step too coarse: risk-neutral probability outside (0, 1)")
    disc = math.exp(-rate * dt)
    j = np.arange(steps + 1)
    prices = spot * u**j * d ** (steps - j)
    values = np.maximum(strike - prices, 0.0)
    for n in range(steps - 1, -1, -1):
        j = np.arange(n + 1)
        prices = spot * u**j * d ** (n - j)
        values = disc * (p * values[1:] + (1 - p) * values[:-1])
        values = np.maximum(values, strike - prices)
    return float(values[0])


# ---------------------------------------------------------------------------
# grid adapters: pricers as tensor entries
# ---------------------------------------------------------------------------

def _split_features(grid: FeatureGrid, n_assets: int):
    if grid.n_features != n_assets + 3:
        raise DimensionMismatchError(
            f"grid must carry {n_assets} spots plus strike, rate, ttm "
            f"({n_assets + 3} features), got {grid.n_features}"
        )


class EuropeanGeoBasketGridPricer(BlackBoxPricer):
    """Closed-form European pricer over a (spots..., strike, rate, ttm) grid."""

    def __init__(self, grid: FeatureGrid, params: BasketModelParams):
        _split_features(grid, params.n_assets)
        super().__init__(grid.shape)
        self.grid = grid
        self.params = params

    def _evaluate(self, idx):
        x = self.grid.points_of_bits(idx)
        m = self.params.n_assets
        return geo_basket_put_batch(x[:, :m], x[:, m], x[:, m + 1], x[:, m + 2], self.params)


class AmericanBasketLsmcGridPricer(BlackBoxPricer):
    """LSMC American pricer over the same grid layout.

    Every multi-index gets its own seed derived from the base seed, so grid
    entries are reproducible regardless of evaluation order or batching.
    """

    def __init__(self, grid: FeatureGrid, params: BasketModelParams, cfg: LsmcConfig,
                 base_seed: int = 0, n_threads: int = 1):
        _split_features(grid, params.n_assets)
        super().__init__(grid.shape)
        self.grid = grid
        self.params = params
        self.cfg = cfg
        self.base_seed = int(base_seed)
        self.n_threads = max(1, int(n_threads))

    def _point_seed(self, bits) -> int:
        ss = np.random.SeedSequence(self.base_seed, spawn_key=tuple(int(b) for b in bits))
        return int(ss.generate_state(1)[0])

    def _price_one(self, bits, coords) -> float:
        m = self.params.n_assets
        point = MarketPoint(
            spots=tuple(coords[:m]), strike=coords[m], rate=coords[m + 1], ttm=coords[m + 2]
        )
        cfg = LsmcConfig(
            n_paths=self.cfg.n_paths,
            n_steps=self.cfg.n_steps,
            basis_degree=self.cfg.basis_degree,
            seed=self._point_seed(bits),
        )
        return price_american_arith_basket_put_lsmc(point, self.params, cfg)

    def _evaluate(self, idx):
        coords = self.grid.points_of_bits(idx)
        if self.n_threads == 1 or len(idx) < 4:
            return np.array([self._price_one(b, c) for b, c in zip(idx, coords)])
        with ThreadPoolExecutor(max_workers=self.n_threads) as pool:
            return np.array(list(pool.map(self._price_one, idx, coords)))

"""Reference calibration rows and market profiles used as defaults and test fixtures."""
from __future__ import annotations

from dataclasses import dataclass

from .liqmodel import LiquiditySessionParams
from .midprice import MidPriceParams

# (alpha_A+ T, beta_A+, alpha_B+ T, beta_B+, alpha_A- T, beta_A-, alpha_B- T, beta_B-)
LIQUIDITY = {
    "de": {
        2021: (0.1751, 0.0122, 2.6968, -1.8208, 0.0859, 0.0240, 3.6898, -2.2508),
        2022: (1.1047, 0.0444, 45.1306, -42.5020, 0.4828, 0.0922, 33.3084, -30.8538),
        2023: (1.2883, 0.1069, 11.4713, -9.0995, 0.4282, 0.1792, 16.3157, -13.0680),
    },
    "fr": {
        2021: (0.1854, 0.2517, 3.2813, -0.6146, 0.1468, 0.2746, 3.5512, -0.7842),
        2022: (1.8613, 0.7615, 5.7148, -1.3478, 1.5962, 0.6560, 3.3275, 0.4182),
        2023: (0.3440, 0.6388, 7.8779, -3.0430, 0.6829, 0.4090, 7.6798, -2.8904),
    },
}

# (kappa, mu, mu_c, m1, m2, sigma, rho_1) as printed
MIDPRICE = {
    "de": {
        2021: (0.25, 109.45, 55.45, 0.09, 0.04, 7.60, 0.26),
        2022: (0.28, 195.12, 214.02, 0.22, 0.58, 41.51, 0.40),
        2023: (0.23, 181.09, 172.83, 0.13, 0.21, 25.20, 0.39),
    },
    "fr": {
        2021: (0.28, 11.50, 21.33, 0.32, 1.28, 17.32, 0.49),
        2022: (0.36, 31.90, 34.23, 0.83, 6.75, 49.55, 0.36),
        2023: (0.19, 20.78, 42.19, 0.35, 3.11, 45.77, 0.56),
    },
}

# one-index vs two-index theoretical gains per battery, by number of batteries
TWO_INDEX_GAINS = {
    "fr": {1: (129, 153), 10: (108, 129), 20: (91, 111)},
    "de": {1: (113, 120), 10: (106, 112), 20: (100, 107), 50: (84, 95)},
}


@dataclass(frozen=True)
class MarketProfile:
    name: str
    K: float            # depth window of the liquidity fit, MWh
    depth_cap: int      # order-book levels kept per side


MARKETS = {"fr": MarketProfile("fr", 20.0, 20), "de": MarketProfile("de", 100.0, 60)}


def liquidity(market: str, year: int) -> LiquiditySessionParams:
    return LiquiditySessionParams.from_table_row(LIQUIDITY[market][year])


def midprice(market: str, year: int, n_sizes: int = 1000) -> MidPriceParams:
    kappa, mu, mu_c, m1, m2, _, _ = MIDPRICE[market][year]
    return MidPriceParams.from_moments(kappa, mu, mu_c, m1, m2, n_sizes)


# Illustrative hourly forward shape (EUR/MWh) for synthetic sessions: night trough,
# morning and evening peaks.  Not estimated from any data set.
DAILY_SHAPE = (46.0, 43.0, 41.0, 40.0, 40.0, 43.0, 50.0, 58.0, 61.0, 57.0, 53.0, 50.0,
               48.0, 46.0, 45.0, 47.0, 52.0, 59.0, 66.0, 65.0, 60.0, 55.0, 52.0, 48.0)

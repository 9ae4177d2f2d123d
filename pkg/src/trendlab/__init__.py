"""Trend-strength analysis of price series: ingest, trend filters, regressions and simulation."""
from .errors import (ConfigError, DataError, DegenerateSeriesError, ParseError,
                     SingularFitError, TrendlabError)
from .ingest import (NormalizedReturns, PriceSeries, compute_returns, load_price_csv,
                     write_price_csv)
from .trend import (Panel, TrendConfig, build_panel, horizon_grid, kernel_normalization,
                    kernel_weights, mean_lookback, trend_series)
from .regress import BootstrapConfig, FitResult, ModelSpec, fit, fit_by_horizon, ols_fit
from .simulate import LandauParams, SimConfig, landau_potential, simulate_market

__version__ = "0.1.0"

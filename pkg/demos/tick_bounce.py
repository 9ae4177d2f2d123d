"""
Tick size and the sign term
===========================

Prices on a coarse tick grid bounce: a move up to the next tick is often
undone by the following move. A driftless random walk rounded to such a grid
shows this as a negative coefficient on ``sign(phi)`` that fades with the
horizon roughly like ``1/sqrt(T)``.
"""

import numpy as np

from trendlab import ModelSpec, SimConfig, compute_returns, horizon_grid, ols_fit, simulate_market
from trendlab.trend import TrendConfig, panel_from_returns

H = horizon_grid("minute", range(1, 7))
price, vol = 5000.0, 0.0003
spec = ModelSpec(features=("const", "sign_phi"))

for ticks_per_sigma in (4, 8, 16):
    cfg = SimConfig(T=H, n_assets=4, n_intervals=500_000, seed=3, frequency="minute", initial_price=price,
                    return_vol=vol, tick_size=ticks_per_sigma * price * vol)
    panel = panel_from_returns([compute_returns(s) for s in simulate_market(cfg)], TrendConfig(H))
    e = np.array([ols_fit(panel.horizon(j), spec)["e"].value for j in range(len(H))])
    slope = np.polyfit(np.log(H), np.log(np.abs(e)), 1)[0]
    print(f"tick = {ticks_per_sigma:2d} sigma  e = {np.round(e, 4)}  slope {slope:+.2f}")

# %%
# The fitted decay steepens as the tick grows relative to one interval's move,
# so the square-root law is an approximation valid for moderately coarse grids.

"""
Coefficients across horizons
============================

Fit every horizon separately, then put all of them on a common scale by
multiplying by ``sqrt(T / 60)`` with ``T`` in minutes. A market whose feedback
does not depend on the horizon would give a flat curve; t-statistics are the
same on either scale.
"""

from trendlab import (BootstrapConfig, ModelSpec, SimConfig, compute_returns, fit_by_horizon, horizon_grid,
                      simulate_market)
from trendlab.report import assemble_curve
from trendlab.trend import TrendConfig, panel_from_returns

H = horizon_grid("daily", range(1, 7))
cfg = SimConfig(a=0.0133, b=0.0129, c=-0.0062, T=H, n_assets=8, n_intervals=4000, seed=5)
panel = panel_from_returns([compute_returns(s) for s in simulate_market(cfg)], TrendConfig(H))

fits = fit_by_horizon(panel, ModelSpec.named("cubic"), BootstrapConfig(300, seed=5))
curve = assemble_curve([("daily", "daily", fits)])

for coef in ("b", "c"):
    Tm, value, stderr = curve.series(coef)
    for t, v, s in zip(Tm, value, stderr):
        print(f"{coef}  T = {t:9.0f} min  {v:+.4f} +- {s:.4f}")

# %%
# The same table as CSV, ready for a plotting tool.
print(curve.to_csv())

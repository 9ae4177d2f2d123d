"""
The trend-strength kernel
=========================

A trend strength is a weighted sum of past normalized returns. The weight of
a return ``n`` intervals back rises linearly, peaks at ``n = T/2`` and decays
exponentially, and the weights are scaled so that their squares sum to one.
For unit-variance inputs the trend strength therefore has unit variance too.
"""

import numpy as np

from trendlab import kernel_normalization, kernel_weights, mean_lookback
from trendlab.trend import trend_raw

# weights for a 16-interval horizon
T = 16.0
n = np.arange(200)
w = kernel_weights(T, n)
print(f"M_T = {kernel_normalization(T):.6f}")
print(f"peak at n = {n[np.argmax(w)]}, sum of squares = {np.sum(w ** 2):.12f}")

# the mean lookback sits just above T + 1
for T in (4, 16, 64, 256):
    print(f"T = {T:4d}  mean lookback = {mean_lookback(T):8.3f}")

# %%
# The analyzer never convolves explicitly: two running sums carry the whole
# history. Feeding white noise in shows the unit variance once the filter has
# forgotten its zero start.
rng = np.random.default_rng(0)
x = rng.standard_normal(200_000)
for T in (2.0, 16.0, 128.0):
    phi = trend_raw(x, T)[int(5 * T):]
    print(f"T = {T:6.1f}  var(phi) = {phi.var():.4f}")

# %%
# Neighbouring horizons overlap, so their trend strengths are correlated.
Ts = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
phis = np.array([trend_raw(x, T)[400:] for T in Ts])
print(np.round(np.corrcoef(phis), 2))

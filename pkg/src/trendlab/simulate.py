"""Synthetic markets driven by polynomial trend feedback.

Normalized returns follow

    R(t+1) = a + b phi + c2 phi^2 + c phi^3 + c4 phi^4 + d phi^5 + e sign(phi) + eps

where ``phi`` is the clipped trend strength of the simulated excess returns,
updated by the same recursion the analyzer uses. With a single horizon the
drift is exactly that polynomial of ``phi_T``.

With several horizons the drift is a polynomial in the horizon sums
``sum_k f(phi_k)``, with weights calibrated on a long pilot path so that the
pooled regression over all horizons (one stacked row per horizon) has the
configured coefficients as its population solution. A plain per-horizon
average would not do this: a pooled fit would then see the coefficients
shrunk by the average cross-horizon correlation of trend strengths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from . import _rng
from ._parallel import ordered_map
from .errors import ConfigError, DataError
from .ingest import PriceSeries, check_frequency
from .trend import kernel_normalization, trend_step

# coefficient order matches regress.FEATURES
COEFFICIENTS = ("a", "b", "c2", "c", "c4", "d", "e")
NOISES = ("gaussian", "student_t")
PILOT_LENGTH = 8_000_000
PILOT_ITERATIONS = 3


@dataclass
class SimConfig:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 0.0
    T: float | tuple = 16.0
    n_assets: int = 1
    n_intervals: int = 10_000
    noise_sigma: float = 1.0
    tick_size: float = 0.0
    initial_price: float = 100.0
    seed: int = 0
    c2: float = 0.0
    c4: float = 0.0
    return_vol: float = 0.01
    frequency: str = "daily"
    burn_in: int | None = None
    noise: str = "gaussian"
    df: float = 5.0
    clip_phi: float = 2.5
    initial_phi: float = 0.0
    start: int = 0

    def __post_init__(self):
        check_frequency(self.frequency)
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be positive")
        if self.n_assets < 1 or self.n_intervals < 1:
            raise ConfigError("n_assets and n_intervals must be positive")
        if self.tick_size < 0:
            raise ConfigError("tick_size must be non-negative")
        if not self.initial_price > 0 or not self.return_vol > 0:
            raise ConfigError("initial_price and return_vol must be positive")
        if self.noise not in NOISES:
            raise ConfigError(f"unknown noise {self.noise!r}; expected one of {NOISES}")
        if self.noise == "student_t" and not self.df > 2:
            raise ConfigError("student_t noise needs df > 2")
        if min(self.horizons) < 2:
            raise ConfigError("horizons must be >= 2")
        if self.burn_in is None:
            self.burn_in = int(math.ceil(5 * max(self.horizons)))

    @property
    def horizons(self) -> tuple:
        return tuple(float(t) for t in np.atleast_1d(self.T))

    @property
    def theta(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in COEFFICIENTS], dtype=float)


@dataclass
class LandauParams:
    b: float
    c: float
    d: float = 0.0

    @classmethod
    def from_regression(cls, b, c, d=0.0) -> "LandauParams":
        """Couplings whose force ``-V'`` equals the drift ``b phi + c phi^3 + d phi^5``."""
        return cls(-b, c, -d)


def landau_potential(phi, p: LandauParams):
    """``V = b/2 phi^2 - c/4 phi^4 + d/6 phi^6`` and the force ``-V'(phi)``."""
    phi = np.asarray(phi, dtype=float)
    V = 0.5 * p.b * phi ** 2 - 0.25 * p.c * phi ** 4 + p.d / 6.0 * phi ** 6
    force = -p.b * phi + p.c * phi ** 3 - p.d * phi ** 5
    if V.ndim == 0:
        return float(V), float(force)
    return V, force


@nb.njit(cache=True, nogil=True)
def _features(out, phi):
    out[0] = 1.0
    out[1] = phi
    out[2] = phi * phi
    out[3] = phi * phi * phi
    out[4] = out[2] * out[2]
    out[5] = out[4] * phi
    out[6] = 1.0 if phi > 0 else (-1.0 if phi < 0 else 0.0)


@nb.njit(cache=True, nogil=True)
def _run(eps, qs, Ms, weights, premium, scale, clip, phi0, burn, record_phi):
    """Simulate one path; returns normalized returns after burn-in and optionally raw phi.

    The state before step ``t`` holds the analyzer's ``phi(t - 1)``, which
    sees returns up to ``t - 2`` (the kernel puts no weight on lag 0), so the
    return at ``t`` is driven exactly as the regression assumes. ``weights``
    act on the horizon sums of the 7 features.
    """
    n = eps.shape[0]
    K = qs.shape[0]
    A = np.empty(K)
    B = np.empty(K)
    for k in range(K):
        B[k] = phi0 / Ms[k]
        A[k] = B[k] * (1.0 - qs[k]) / qs[k]
    R = np.empty(n - burn)
    phis = np.empty((n - burn if record_phi else 0, K))
    f = np.empty(7)
    z = np.empty(7)
    for t in range(n):
        for j in range(7):
            z[j] = 0.0
        for k in range(K):
            raw = Ms[k] * B[k]
            if record_phi and t >= burn:
                phis[t - burn, k] = raw
            _features(f, min(max(raw, -clip), clip))
            for j in range(7):
                z[j] += f[j]
        z[0] = 1.0
        drift = 0.0
        for j in range(7):
            drift += weights[j] * z[j]
        r = drift + scale * eps[t]
        if t >= burn:
            R[t - burn] = r
        x = (r - premium) / scale
        for k in range(K):
            A[k], B[k] = trend_step(A[k], B[k], qs[k], x)
    return R, phis


def _noise(cfg_noise, df, rng, n):
    if cfg_noise == "gaussian":
        return rng.standard_normal(n)
    return rng.standard_t(df, size=n) * math.sqrt((df - 2.0) / df)


def _premium(weights, K):
    # unconditional drift for standard normal phi, clipping ignored
    return weights[0] + K * (weights[2] + 3.0 * weights[4])


@nb.njit(cache=True, nogil=True)
def _pilot_moments(eps, qs, Ms, weights, premium, clip, burn, warm, active, G, H, c):
    """Simulate one pilot path and add its pooled moments to G, H and c in place."""
    R, phis = _run(eps, qs, Ms, weights, premium, 1.0, clip, 0.0, burn, True)
    n = R.shape[0]
    K = qs.shape[0]
    p = active.shape[0]
    # horizon sums that drive each return
    z = np.zeros((n, 7))
    f = np.empty(7)
    for t in range(n):
        for k in range(K):
            _features(f, min(max(phis[t, k], -clip), clip))
            for j in range(7):
                z[t, j] += f[j]
        z[t, 0] = 1.0
    # analyzer view: normalize, demean, then run the trend recursion per horizon
    xn = R / R.std()
    xn = xn - xn.mean()
    x = np.empty(p)
    g = np.empty(7)
    for k in range(K):
        A = 0.0
        B = 0.0
        for t in range(n - 1):
            A, B = trend_step(A, B, qs[k], xn[t])
            if t < warm[k]:
                continue
            _features(f, min(max(Ms[k] * B, -clip), clip))
            _features(g, min(max(phis[t + 1, k], -clip), clip))
            e = eps[burn + t + 1]
            for i in range(p):
                x[i] = f[active[i]]
            for i in range(p):
                # the simulator's own trend strength is independent of e, so
                # only the demeaning difference carries (low-noise) signal
                c[i] += (x[i] - g[active[i]]) * e
                for j in range(p):
                    G[i, j] += x[i] * x[j]
                    H[i, j] += x[i] * z[t + 1, active[j]]


@lru_cache(maxsize=32)
def pooled_drift_weights(theta: tuple, horizons: tuple, clip: float = 2.5, path_length: int = 10_000,
                         pilot_length: int = PILOT_LENGTH, iterations: int = PILOT_ITERATIONS) -> np.ndarray:
    """Weights on horizon sums that make the pooled fit recover ``theta`` on average.

    Solves ``H w = G theta - c`` where ``G = sum_k E[x_k x_k']``,
    ``H = sum_k E[x_k z']`` and ``c = sum_k E[x_k eps]``. The regressors
    ``x_k`` are features of the trend strength the analyzer computes
    (per-path normalization and demeaning, warm-up per horizon) and ``z``
    are the horizon sums that drive the simulated return. The moments come
    from fixed-seed pilot paths of ``path_length`` intervals that already
    carry the current drift, and the solve is iterated to a fixed point.
    ``c`` is not zero because the per-path demeaning lets each regressor see
    the noise it is paired with, which biases short samples at long horizons.
    """
    theta = np.asarray(theta, dtype=float)
    active = np.array(sorted({0} | {j for j in range(7) if theta[j] != 0.0}), dtype=np.int64)
    K = len(horizons)
    qs = np.exp(-2.0 / np.asarray(horizons))
    Ms = np.array([kernel_normalization(T) for T in horizons])
    burn = int(math.ceil(5 * max(horizons)))
    warm = np.array([int(math.ceil(5 * T)) for T in horizons], dtype=np.int64)
    n_paths = max(1, -(-pilot_length // path_length))
    weights = np.zeros(7)
    p = len(active)
    for it in range(iterations):
        rng = _rng.stream(0, _rng.CALIBRATION, it)
        G, H, c = np.zeros((p, p)), np.zeros((p, p)), np.zeros(p)
        for _ in range(n_paths):
            eps = rng.standard_normal(path_length + burn)
            _pilot_moments(eps, qs, Ms, weights, _premium(weights, K), clip, burn, warm, active, G, H, c)
        weights = np.zeros(7)
        weights[active] = np.linalg.solve(H, G @ theta[active] - c)
    return weights


def drift_weights(cfg: SimConfig) -> np.ndarray:
    if len(cfg.horizons) == 1:
        return cfg.theta
    return pooled_drift_weights(tuple(cfg.theta), cfg.horizons, cfg.clip_phi, cfg.n_intervals).copy()


def simulate_paths(cfg: SimConfig, record_phi: bool = False):
    """Normalized returns of every asset, shape ``(n_assets, n_intervals)``.

    With ``record_phi`` also returns the unclipped trend strengths seen by the
    drift, shape ``(n_assets, n_intervals, K)``.
    """
    qs = np.exp(-2.0 / np.array(cfg.horizons))
    Ms = np.array([kernel_normalization(T) for T in cfg.horizons])
    w = drift_weights(cfg)
    premium = _premium(w, len(qs))
    n = cfg.burn_in + cfg.n_intervals

    def one(i):
        eps = _noise(cfg.noise, cfg.df, _rng.stream(cfg.seed, _rng.SIMULATION, i), n)
        return _run(eps, qs, Ms, w, premium, cfg.noise_sigma, cfg.clip_phi, cfg.initial_phi,
                    cfg.burn_in, record_phi)

    out = ordered_map(one, range(cfg.n_assets))
    R = np.stack([o[0] for o in out])
    if record_phi:
        return R, np.stack([o[1] for o in out])
    return R


def apply_tick_grid(series: PriceSeries, tick_size: float) -> PriceSeries:
    """Round every price half-up to the nearest multiple of ``tick_size``."""
    if not tick_size > 0:
        raise ConfigError("tick_size must be positive")
    if np.any(series.prices <= tick_size):
        raise DataError(f"{series.asset_id}: tick size {tick_size} is not below every price")
    rounded = np.floor(series.prices / tick_size + 0.5) * tick_size
    return PriceSeries(series.asset_id, series.frequency, series.timestamps.copy(), rounded)


def simulate_market(cfg: SimConfig) -> list[PriceSeries]:
    """Price series for ``cfg.n_assets`` assets with ``cfg.n_intervals`` returns each.

    Prices are ``initial_price * exp(return_vol * cumsum(R))``, then rounded
    to the tick grid when ``tick_size > 0``.
    """
    R = simulate_paths(cfg)
    ts = cfg.start + np.arange(cfg.n_intervals + 1, dtype=np.int64)
    out = []
    for i in range(cfg.n_assets):
        logp = np.concatenate([[0.0], np.cumsum(cfg.return_vol * R[i])])
        s = PriceSeries(f"SIM{i:02d}", cfg.frequency, ts, cfg.initial_price * np.exp(logp))
        out.append(apply_tick_grid(s, cfg.tick_size) if cfg.tick_size > 0 else s)
    return out

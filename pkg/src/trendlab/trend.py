"""Trend strengths and the (time, asset) x horizon panel.

The trend strength for horizon ``T`` is a weighted sum of past excess
returns with kernel ``w(n) = M_T * n * exp(-2n/T)``, scaled so that the
weights have unit sum of squares. It is evaluated with the two-state
recursion

    B(t) = q * (B(t-1) + A(t-1)),   A(t) = x(t) + q * A(t-1),   q = exp(-2/T)

so that ``phi(t) = M_T * B(t) = sum_n M_T n q^n x(t-n)``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba as nb
import numpy as np

from ._parallel import ordered_map
from .errors import ConfigError, DataError
from .ingest import (MINUTES_PER_DAY, NormalizedReturns, PriceSeries, Session, TradingDaySegment,
                     check_frequency, session_for, split_trading_days)

log = logging.getLogger(__name__)

MINUTES_PER_TRADING_DAY = 2 ** 10
TRADING_DAYS_PER_YEAR = 260
MAX_DAY_BY_DAY_HORIZON = 64
MODES = ("day_by_day", "continuous")

_GRID_K = {"minute": range(1, 11), "daily": range(1, 11), "monthly": range(1, 9), "yearly": range(1, 8)}


def horizon_grid(frequency: str, ks=None) -> tuple[float, ...]:
    """Standard horizons in native intervals: 2**k, or 1.5 * 2**k months for monthly data."""
    check_frequency(frequency)
    ks = _GRID_K[frequency] if ks is None else ks
    scale = 1.5 if frequency == "monthly" else 1.0
    return tuple(scale * 2.0 ** k for k in ks)


def kernel_normalization(T: float) -> float:
    """Closed-form ``M_T`` with ``sum_n (M_T n e^{-2n/T})^2 = 1``."""
    if not T >= 2:
        raise ConfigError(f"horizon must be >= 2, got {T}")
    p = math.exp(-4.0 / T)
    return (p * (1.0 + p) / (1.0 - p) ** 3) ** -0.5


def kernel_weights(T: float, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    return kernel_normalization(T) * n * np.exp(-2.0 * n / T)


def mean_lookback(T: float) -> float:
    """Kernel-weighted mean of ``n + 1``, equal to ``2 / (1 - e^{-2/T})`` (about ``T + 1``)."""
    if not T >= 2:
        raise ConfigError(f"horizon must be >= 2, got {T}")
    return 2.0 / -math.expm1(-2.0 / T)


@dataclass
class TrendConfig:
    horizons: tuple = field(default_factory=lambda: horizon_grid("daily"))
    clip_phi: float = 2.5
    warmup_multiplier: float = 5.0
    lag: int = 0

    def __post_init__(self):
        self.horizons = tuple(float(T) for T in np.atleast_1d(self.horizons))
        if not self.horizons:
            raise ConfigError("at least one horizon required")
        if min(self.horizons) < 2:
            raise ConfigError(f"all horizons must be >= 2, got {min(self.horizons)}")
        if not self.clip_phi > 0:
            raise ConfigError("clip_phi must be positive")
        if self.warmup_multiplier < 3:
            raise ConfigError("warmup_multiplier must be >= 3")
        if self.lag < 0 or int(self.lag) != self.lag:
            raise ConfigError("lag must be a non-negative integer")
        self.lag = int(self.lag)

    def warmup(self, T: float, mode: str = "continuous") -> int:
        return int(math.ceil(T if mode == "day_by_day" else self.warmup_multiplier * T))


@dataclass
class TrendState:
    """Streaming form of the trend recursion for a single horizon."""

    T: float
    A: float = 0.0
    B: float = 0.0
    count: int = 0

    def __post_init__(self):
        self.q = math.exp(-2.0 / self.T)
        self.M = kernel_normalization(self.T)

    def update(self, x: float) -> float:
        self.B = self.q * (self.B + self.A)
        self.A = x + self.q * self.A
        self.count += 1
        return self.phi

    @property
    def phi(self) -> float:
        return self.M * self.B


@nb.njit(cache=True, nogil=True)
def trend_step(A, B, q, x):
    return x + q * A, q * (B + A)


@nb.njit(cache=True, nogil=True)
def _recursion(x, q):
    n = x.shape[0]
    out = np.empty(n)
    A = 0.0
    B = 0.0
    for t in range(n):
        A, B = trend_step(A, B, q, x[t])
        out[t] = B
    return out


def trend_raw(x, T: float) -> np.ndarray:
    """Unclipped trend strength at every index, starting from a zero state."""
    x = np.ascontiguousarray(x, dtype=float)
    return kernel_normalization(T) * _recursion(x, math.exp(-2.0 / T))


def _phi_column(x, T, warmup, clip):
    phi = np.clip(trend_raw(x, T), -clip, clip)
    phi[:min(warmup, len(phi))] = np.nan
    return phi


def trend_series(returns, T: float, cfg: TrendConfig | None = None, timestamps=None):
    """Clipped trend strength after warm-up.

    Parameters
    ----------
    returns : NormalizedReturns or array
        Excess returns are taken from ``returns.excess``; a bare array is used as is.
    T : float
        Horizon in native intervals.

    Returns
    -------
    (timestamps, phi) : tuple of arrays
        Only indices at or after ``ceil(warmup_multiplier * T)`` are emitted.
    """
    cfg = cfg or TrendConfig(horizons=(T,))
    if isinstance(returns, NormalizedReturns):
        x, ts = returns.excess, returns.timestamps
    else:
        x = np.asarray(returns, dtype=float)
        ts = np.arange(len(x)) if timestamps is None else np.asarray(timestamps)
    if len(x) == 0:
        raise DataError("empty return series")
    w = cfg.warmup(T)
    if len(x) <= w:
        log.warning("series of length %d shorter than warm-up %d for T=%g", len(x), w, T)
        return ts[:0], np.empty(0)
    phi = np.clip(trend_raw(x, T), -cfg.clip_phi, cfg.clip_phi)
    return ts[w:], phi[w:]


# --- panel ----------------------------------------------------------------

def day_ids(timestamps, frequency: str, offset: int = 0) -> np.ndarray:
    """Resampling unit of each timestamp: the session day for minute data, the interval otherwise."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if frequency == "minute":
        return np.floor_divide(ts - offset, MINUTES_PER_DAY)
    return ts.copy()


@dataclass
class Panel:
    """Rows of (timestamp, asset) with one trend strength per horizon and the next return.

    ``phi`` is NaN where a horizon is still warming up; a row exists when at
    least one horizon is defined. ``day`` holds the bootstrap resampling unit.
    """

    timestamps: np.ndarray
    asset: np.ndarray
    assets: list
    day: np.ndarray
    phi: np.ndarray
    response: np.ndarray
    horizons: tuple
    frequency: str = "daily"
    lag: int = 0
    mode: str = "continuous"
    clip_phi: float = 2.5
    day_offsets: dict = field(default_factory=dict)
    transform: str | None = None
    source: "PanelSource | None" = field(default=None, repr=False)

    @property
    def n_rows(self) -> int:
        return len(self.response)

    @property
    def K(self) -> int:
        return self.phi.shape[1]

    def __len__(self):
        return self.n_rows

    def select(self, mask, keep_source=False) -> "Panel":
        mask = np.asarray(mask)
        return replace(self, timestamps=self.timestamps[mask], asset=self.asset[mask], day=self.day[mask],
                       phi=self.phi[mask], response=self.response[mask],
                       source=self.source if keep_source else None)

    def horizon(self, j: int) -> "Panel":
        """Single-horizon panel restricted to rows where that horizon is defined."""
        keep = np.isfinite(self.phi[:, j])
        out = self.select(keep, keep_source=False)
        return replace(out, phi=out.phi[:, [j]], horizons=(self.horizons[j],), source=None)

    def pairs(self):
        """Long format over horizons: (phi, response, day, asset, horizon index), NaN pairs dropped."""
        n, K = self.phi.shape
        phi = self.phi.reshape(-1)
        ok = np.isfinite(phi)
        rep = lambda a: np.repeat(a, K)[ok]
        return (phi[ok], rep(self.response), rep(self.day), rep(self.asset),
                np.tile(np.arange(K), n)[ok])

    def metadata(self) -> dict:
        return {
            "frequency": self.frequency,
            "horizons": list(self.horizons),
            "lag": self.lag,
            "mode": self.mode,
            "clip_phi": self.clip_phi,
            "phi_clipped_at": "emission",
            "assets": list(self.assets),
            "day_offsets": {str(k): int(v) for k, v in self.day_offsets.items()},
            "transform": self.transform,
            "n_rows": self.n_rows,
        }

    def to_csv(self, path) -> Path:
        """Write ``timestamp,asset,phi_k1..phi_kK,response`` plus a ``.json`` metadata sidecar."""
        path = Path(path)
        K = self.K
        cols = ["timestamp", "asset"] + [f"phi_k{j + 1}" for j in range(K)] + ["response"]
        fmt = lambda v: "" if not np.isfinite(v) else repr(float(v))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            names = self.assets
            for i in range(self.n_rows):
                fh.write(f"{int(self.timestamps[i])},{names[self.asset[i]]},"
                         + ",".join(fmt(v) for v in self.phi[i]) + f",{fmt(self.response[i])}\n")
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return sidecar

    @classmethod
    def from_csv(cls, path) -> "Panel":
        import pandas as pd

        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        meta = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
        df = pd.read_csv(path, dtype={"asset": str}, float_precision="round_trip")
        phi_cols = [c for c in df.columns if c.startswith("phi_k")]
        if not phi_cols or "response" not in df or "timestamp" not in df or "asset" not in df:
            raise DataError(f"{path}: expected columns timestamp,asset,phi_k1..phi_kK,response")
        assets = meta.get("assets") or list(dict.fromkeys(df["asset"]))
        code = {a: i for i, a in enumerate(assets)}
        asset = np.array([code[a] for a in df["asset"]], dtype=np.int64)
        frequency = meta.get("frequency", "daily")
        offsets = {a: int(v) for a, v in meta.get("day_offsets", {}).items()}
        ts = df["timestamp"].to_numpy(np.int64)
        off = np.array([offsets.get(a, 0) for a in assets], dtype=np.int64)[asset] if assets else 0
        day = day_ids(ts - off, frequency)
        horizons = tuple(meta.get("horizons") or range(1, len(phi_cols) + 1))
        return cls(ts, asset, assets, day, df[phi_cols].to_numpy(float), df["response"].to_numpy(float),
                   horizons, frequency, int(meta.get("lag", 0)), meta.get("mode", "continuous"),
                   float(meta.get("clip_phi", 2.5)), offsets, meta.get("transform"))


def _unit_rows(x, y, ts, horizons, cfg, mode):
    n = len(x)
    n_rows = n - 1 - cfg.lag
    if n_rows <= 0:
        return None
    phi = np.column_stack([_phi_column(x, T, cfg.warmup(T, mode), cfg.clip_phi)[:n_rows] for T in horizons])
    keep = np.isfinite(phi).any(axis=1)
    return ts[:n_rows][keep], phi[keep], y[1 + cfg.lag:][keep]


def build_panel(assets, cfg: TrendConfig, mode: str = "continuous") -> Panel:
    """Assemble the panel from normalized returns (continuous) or session segments (day_by_day).

    The response of the row at interval ``t`` is the normalized return at
    ``t + 1 + lag``. In ``day_by_day`` mode every segment starts from a
    zero trend state, horizon ``T`` needs ``T`` returns of ramp-up and
    responses never cross the session close.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    assets = list(assets)
    if not assets:
        raise DataError("no input series")
    if mode == "day_by_day":
        if not all(isinstance(a, TradingDaySegment) for a in assets):
            raise ConfigError("day_by_day mode takes TradingDaySegment inputs")
        if max(cfg.horizons) > MAX_DAY_BY_DAY_HORIZON:
            raise ConfigError(f"day_by_day mode supports horizons up to {MAX_DAY_BY_DAY_HORIZON}")
        frequency = "minute"
    else:
        if not all(isinstance(a, NormalizedReturns) for a in assets):
            raise ConfigError("continuous mode takes NormalizedReturns inputs")
        freqs = {a.frequency for a in assets}
        if len(freqs) != 1:
            raise ConfigError(f"inconsistent frequencies across assets: {sorted(freqs)}")
        frequency = freqs.pop()

    names = list(dict.fromkeys(a.asset_id for a in assets))
    code = {a: i for i, a in enumerate(names)}

    def one(a):
        if mode == "day_by_day":
            return _unit_rows(a.excess, a.returns, a.timestamps, cfg.horizons, cfg, mode)
        return _unit_rows(a.excess, a.values, a.timestamps, cfg.horizons, cfg, mode)

    pairs = [(a, p) for a, p in zip(assets, ordered_map(one, assets)) if p is not None and len(p[0]) > 0]
    K = len(cfg.horizons)
    if not pairs:
        ts, asset, day = (np.empty(0, dtype=np.int64),) * 3
        phi, y = np.empty((0, K)), np.empty(0)
    else:
        ts = np.concatenate([p[0] for _, p in pairs])
        asset = np.concatenate([np.full(len(p[0]), code[a.asset_id], dtype=np.int64) for a, p in pairs])
        order = np.lexsort((asset, ts))
        ts, asset = ts[order], asset[order]
        # gather one field at a time to keep the peak near one panel's worth
        if mode == "day_by_day":
            day = np.concatenate([np.full(len(p[0]), a.day, dtype=np.int64) for a, p in pairs])[order]
        else:
            day = day_ids(ts, frequency)
        phi = np.concatenate([p[1] for _, p in pairs])[order]
        y = np.concatenate([p[2] for _, p in pairs])[order]
    return Panel(ts, asset, names, day, phi, y, tuple(cfg.horizons), frequency, cfg.lag, mode, cfg.clip_phi)


# --- rebuildable panels ---------------------------------------------------

@dataclass
class PanelSource:
    """Everything needed to rebuild a panel with re-estimated return normalization."""

    returns: list
    cfg: TrendConfig
    mode: str = "continuous"
    prices: list | None = None
    sessions: dict | None = None

    def day_offset(self, asset_id) -> int:
        if self.mode == "day_by_day":
            return session_for(self.sessions, asset_id).open
        return 0

    def build(self, returns=None) -> Panel:
        returns = self.returns if returns is None else returns
        if self.mode == "day_by_day":
            by_id = {p.asset_id: p for p in self.prices}
            segs = []
            for r in returns:
                segs.extend(split_trading_days(by_id[r.asset_id], session_for(self.sessions, r.asset_id), r))
            panel = build_panel(segs, self.cfg, "day_by_day")
            panel.day_offsets = {r.asset_id: self.day_offset(r.asset_id) for r in returns}
        else:
            panel = build_panel(returns, self.cfg, "continuous")
        panel.source = self
        return panel

    def _renormalized(self, r, test_days):
        d = day_ids(r.raw_timestamps, r.frequency, self.day_offset(r.asset_id))
        return r.renormalize(~np.isin(d, test_days))

    def rebuild_excluding(self, test_days) -> Panel:
        """Panel whose normalization is estimated without returns that fall on ``test_days``."""
        test_days = np.asarray(sorted(test_days), dtype=np.int64)
        return self.build([self._renormalized(r, test_days) for r in self.returns])

    def iter_rebuilt(self, test_days):
        """Single-asset panels of ``rebuild_excluding``, one asset at a time."""
        test_days = np.asarray(sorted(test_days), dtype=np.int64)
        for r in self.returns:
            yield self.build([self._renormalized(r, test_days)])


def panel_from_returns(returns, cfg: TrendConfig, mode: str = "continuous",
                       prices: list[PriceSeries] | None = None,
                       sessions: dict[str, Session] | None = None) -> Panel:
    """Build a panel that remembers its inputs, so cross-validation can re-estimate mu and sigma."""
    if mode == "day_by_day" and (prices is None or sessions is None):
        raise ConfigError("day_by_day mode needs the minute price series and a session calendar")
    return PanelSource(list(returns), cfg, mode, prices, sessions).build()

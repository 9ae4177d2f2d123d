"""Price ingestion, normalized log-returns and intraday session splitting.

Timestamps are integers in the native unit of the series frequency (minutes,
days, months or years since the epoch). Gaps are not imputed: the return
across a gap is treated as one interval.
"""
from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .errors import ConfigError, DataError, DegenerateSeriesError, ParseError

log = logging.getLogger(__name__)

FREQUENCIES = ("minute", "daily", "monthly", "yearly")
VOL_MODES = ("full_sample", "ewma")
EWMA_SEED_LENGTH = 12
MINUTES_PER_DAY = 1440


def check_frequency(frequency: str) -> str:
    if frequency not in FREQUENCIES:
        raise ConfigError(f"unknown frequency {frequency!r}; expected one of {FREQUENCIES}")
    return frequency


@dataclass
class PriceSeries:
    asset_id: str
    frequency: str
    timestamps: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        check_frequency(self.frequency)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.prices = np.asarray(self.prices, dtype=float)
        if self.timestamps.shape != self.prices.shape or self.timestamps.ndim != 1:
            raise DataError(f"{self.asset_id}: timestamps and prices must be 1-d arrays of equal length")
        if not np.all(self.prices > 0):
            bad = int(np.flatnonzero(~(self.prices > 0))[0])
            raise DataError(f"{self.asset_id}: non-positive price {self.prices[bad]!r} at timestamp {self.timestamps[bad]}")
        if np.any(np.diff(self.timestamps) <= 0):
            bad = int(np.flatnonzero(np.diff(self.timestamps) <= 0)[0]) + 1
            raise DataError(f"{self.asset_id}: timestamps not strictly increasing at {self.timestamps[bad]}")

    def __len__(self):
        return len(self.prices)

    @property
    def observations(self):
        return list(zip(self.timestamps.tolist(), self.prices.tolist()))

    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.prices))


def load_price_csv(path, frequency: str) -> list[PriceSeries]:
    """Read a long-format ``timestamp,asset,price`` file into one series per asset.

    Assets are returned in order of first appearance; each series is sorted by
    timestamp. Duplicate ``(timestamp, asset)`` rows are rejected.
    """
    check_frequency(frequency)
    rows: dict[str, list[tuple[int, float, int]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file, header 'timestamp,asset,price' required", line=1)
        header = [h.strip() for h in header]
        if sorted(header) != ["asset", "price", "timestamp"]:
            raise ParseError(f"header must be timestamp,asset,price; got {','.join(header)}", line=1)
        i_ts, i_asset, i_price = header.index("timestamp"), header.index("asset"), header.index("price")
        for rec in reader:
            line = reader.line_num
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 3:
                raise ParseError(f"expected 3 fields, got {len(rec)}", line=line)
            try:
                ts = int(rec[i_ts].strip())
            except ValueError:
                raise ParseError(f"timestamp {rec[i_ts]!r} is not an integer", line=line) from None
            try:
                price = float(rec[i_price].strip())
            except ValueError:
                raise ParseError(f"price {rec[i_price]!r} is not a number", line=line) from None
            if not math.isfinite(price) or price <= 0:
                raise DataError(f"line {line}: non-positive price {rec[i_price].strip()!r}")
            asset = rec[i_asset].strip()
            if not asset:
                raise ParseError("empty asset identifier", line=line)
            rows.setdefault(asset, []).append((ts, price, line))

    out = []
    for asset, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        ts = np.array([r[0] for r in recs], dtype=np.int64)
        dup = np.flatnonzero(np.diff(ts) == 0)
        if dup.size:
            r = recs[dup[0] + 1]
            raise DataError(f"line {r[2]}: duplicate row for asset {asset!r} at timestamp {r[0]}")
        out.append(PriceSeries(asset, frequency, ts, np.array([r[1] for r in recs])))
    return out


def write_price_csv(series: list[PriceSeries], path) -> None:
    """Write series in the long format read by :func:`load_price_csv`, ordered by (timestamp, asset order)."""
    ts = np.concatenate([s.timestamps for s in series]) if series else np.array([], dtype=np.int64)
    order_key = np.concatenate([np.full(len(s), i) for i, s in enumerate(series)]) if series else ts
    prices = np.concatenate([s.prices for s in series]) if series else np.array([])
    order = np.lexsort((order_key, ts))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "asset", "price"])
        for j in order:
            w.writerow([int(ts[j]), series[order_key[j]].asset_id, repr(float(prices[j]))])


@dataclass
class NormalizedReturns:
    """Clipped, variance-normalized log-returns of one asset.

    ``values`` holds ``R = r_clipped / sigma``; ``excess`` subtracts the
    normalized risk premium ``mu / sigma``. In ``ewma`` mode ``sigma`` is an
    array aligned with ``timestamps``.
    """

    asset_id: str
    timestamps: np.ndarray
    values: np.ndarray
    mu: float
    sigma: float | np.ndarray
    clip_sigma: float
    raw: np.ndarray
    vol_mode: str = "full_sample"
    ewma_half_life: float | None = None
    min_sigma: float | None = None
    frequency: str = "daily"
    n_clipped: int = 0
    raw_timestamps: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.values)

    @property
    def excess(self) -> np.ndarray:
        return self.values - self.mu / self.sigma

    def renormalize(self, mask) -> "NormalizedReturns":
        """Re-estimate mu and sigma from the raw returns selected by ``mask``.

        ``mask`` is aligned with ``raw`` (one entry per raw log-return). The
        output keeps every timestamp; only the estimates change.
        """
        mask = np.asarray(mask, dtype=bool)
        return _normalize(self.asset_id, self.raw_timestamps, self.raw, self.vol_mode,
                          self.ewma_half_life, self.clip_sigma, self.min_sigma,
                          self.frequency, mask)


def clip_returns(r, mu, sigma, clip_sigma):
    """Clip raw returns to ``mu +- clip_sigma * sigma``. Idempotent for fixed estimates."""
    lo = mu - clip_sigma * sigma
    hi = mu + clip_sigma * sigma
    return np.clip(r, lo, hi)


@nb.njit(cache=True)
def _ewma_pass(r, mu, lam, seed_var, clip_sigma):
    n = r.shape[0]
    sig = np.empty(n)
    out = np.empty(n)
    var = seed_var
    nclip = 0
    for t in range(n):
        s = math.sqrt(var)
        sig[t] = s
        x = r[t]
        if x > mu + clip_sigma * s:
            x = mu + clip_sigma * s
            nclip += 1
        elif x < mu - clip_sigma * s:
            x = mu - clip_sigma * s
            nclip += 1
        out[t] = x
        d = x - mu
        var = lam * var + (1.0 - lam) * d * d
    return out, sig, nclip


def _is_degenerate(sigma, r):
    scale = float(np.max(np.abs(r))) if r.size else 0.0
    return not sigma > 1e-12 * scale


def _normalize(asset_id, raw_ts, r, vol_mode, half_life, clip_sigma, min_sigma, frequency, mask=None):
    sel = r if mask is None else r[mask]
    if sel.size < 2:
        raise DataError(f"{asset_id}: need at least 2 returns to estimate volatility")
    mu = float(np.mean(sel))
    if vol_mode == "full_sample":
        sigma = float(np.std(sel))
        if _is_degenerate(sigma, sel):
            raise DegenerateSeriesError(f"{asset_id}: zero return variance")
        if min_sigma is not None and sigma < min_sigma:
            raise DegenerateSeriesError(f"{asset_id}: sigma {sigma:.3g} below floor {min_sigma:.3g}")
        clipped = clip_returns(r, mu, sigma, clip_sigma)
        n_clipped = int(np.count_nonzero(clipped != r))
        return NormalizedReturns(asset_id, raw_ts.copy(), clipped / sigma, mu, sigma, clip_sigma, r,
                                 vol_mode, half_life, min_sigma, frequency, n_clipped, raw_ts)
    if vol_mode != "ewma":
        raise ConfigError(f"unknown vol_mode {vol_mode!r}; expected one of {VOL_MODES}")
    if half_life is None or not half_life > 0:
        raise ConfigError("ewma mode needs a positive half-life")
    if r.size <= EWMA_SEED_LENGTH:
        raise DataError(f"{asset_id}: ewma mode needs more than {EWMA_SEED_LENGTH} returns")
    seed_src = r[:EWMA_SEED_LENGTH] if mask is None else sel[:EWMA_SEED_LENGTH]
    seed_var = float(np.var(seed_src, ddof=1))
    if _is_degenerate(math.sqrt(max(seed_var, 0.0)), seed_src):
        raise DegenerateSeriesError(f"{asset_id}: zero variance in the ewma seed window")
    lam = 2.0 ** (-1.0 / half_life)
    tail = np.ascontiguousarray(r[EWMA_SEED_LENGTH:])
    clipped, sig, nclip = _ewma_pass(tail, mu, lam, seed_var, float(clip_sigma))
    if min_sigma is not None and np.min(sig) < min_sigma:
        raise DegenerateSeriesError(f"{asset_id}: ewma sigma falls below floor {min_sigma:.3g}")
    return NormalizedReturns(asset_id, raw_ts[EWMA_SEED_LENGTH:].copy(), clipped / sig, mu, sig,
                             clip_sigma, r, vol_mode, half_life, min_sigma, frequency, int(nclip), raw_ts)


def compute_returns(series: PriceSeries, vol_mode: str = "full_sample", ewma_half_life: float | None = None,
                    clip_sigma: float = 20.0, min_sigma: float | None = None) -> NormalizedReturns:
    """Normalized log-returns of a price series.

    Parameters
    ----------
    series : PriceSeries
        At least 3 observations.
    vol_mode : {"full_sample", "ewma"}
        ``full_sample`` uses the population standard deviation of all returns.
        ``ewma`` uses an exponentially weighted variance with decay
        ``2**(-1/ewma_half_life)`` per interval, seeded with the sample
        variance of the first 12 returns; those 12 returns are not emitted.
    ewma_half_life : float
        Half-life in native intervals (e.g. 360 for 30 years of months).
    clip_sigma : float
        Raw returns further than ``clip_sigma`` standard deviations from the
        mean are moved onto that boundary.
    min_sigma : float, optional
        Reject series whose volatility falls below this floor, e.g. pegged
        currencies with long stretches of zero returns.

    Returns
    -------
    NormalizedReturns
    """
    if len(series) < 3:
        raise DataError(f"{series.asset_id}: need at least 3 prices, got {len(series)}")
    r = series.log_returns()
    return _normalize(series.asset_id, series.timestamps[1:], r, vol_mode, ewma_half_life,
                      clip_sigma, min_sigma, series.frequency)


# --- intraday sessions ---------------------------------------------------

@dataclass(frozen=True)
class Session:
    """Trading session as clock minutes after midnight; may wrap past midnight."""
    open: int
    close: int

    @property
    def length(self) -> int:
        return (self.close - self.open) % MINUTES_PER_DAY


_SESSION_RE = re.compile(r"^\s*([^=#]+?)\s*=\s*(\d{1,2}):(\d{2})\s*-\s*(\d{1,2}):(\d{2})\s*$")


def parse_sessions(text: str) -> dict[str, Session]:
    """Parse ``asset=HH:MM-HH:MM`` lines. ``#`` starts a comment; ``*`` is a default."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip() or line.strip().startswith("["):
            continue
        m = _SESSION_RE.match(line)
        if not m:
            raise ParseError(f"expected asset=HH:MM-HH:MM, got {line.strip()!r}", line=lineno)
        h0, m0, h1, m1 = (int(g) for g in m.groups()[1:])
        if h0 > 23 or h1 > 24 or m0 > 59 or m1 > 59:
            raise ParseError(f"invalid clock time in {line.strip()!r}", line=lineno)
        out[m.group(1)] = Session(h0 * 60 + m0, (h1 * 60 + m1) % MINUTES_PER_DAY if h1 < 24 else MINUTES_PER_DAY - 1)
    return out


def load_sessions(path) -> dict[str, Session]:
    return parse_sessions(Path(path).read_text(encoding="utf-8"))


def session_for(sessions: dict[str, Session], asset_id: str) -> Session:
    try:
        return sessions[asset_id]
    except KeyError:
        if "*" in sessions:
            return sessions["*"]
        raise ConfigError(f"no session defined for asset {asset_id!r}") from None


@dataclass
class TradingDaySegment:
    """Returns of one session with the overnight and first-minute returns set aside.

    ``returns`` are normalized returns when the segment was cut from
    :class:`NormalizedReturns`, otherwise raw log-returns; ``excess`` is the
    matching trend input.
    """

    asset_id: str
    day: int
    date: _dt.date
    timestamps: np.ndarray
    returns: np.ndarray
    excess: np.ndarray
    first_minute: tuple[int, float] | None = None
    overnight: tuple[int, float] | None = None

    def __len__(self):
        return len(self.returns)


def split_trading_days(series: PriceSeries, session: Session,
                       returns: NormalizedReturns | None = None) -> list[TradingDaySegment]:
    """Cut a minute series into one segment per session.

    For each session, the return into its first price (overnight) and the
    return over its first minute are recorded on the segment but left out of
    ``returns``. Prices outside the session window are ignored. Sessions
    without any remaining return are skipped with a warning.
    """
    if series.frequency != "minute":
        raise ConfigError(f"{series.asset_id}: session splitting needs minute data, got {series.frequency}")
    ts = series.timestamps
    ret_ts = ts[1:]
    if returns is None:
        vals = series.log_returns()
        exc = vals
    else:
        idx = np.searchsorted(returns.timestamps, ret_ts)
        idx_c = np.minimum(idx, len(returns.timestamps) - 1)
        found = returns.timestamps[idx_c] == ret_ts
        vals = np.where(found, returns.values[idx_c], np.nan)
        exc = np.where(found, returns.excess[idx_c], np.nan)

    offset = ts - session.open
    sday = np.floor_divide(offset, MINUTES_PER_DAY)
    in_sess = np.mod(offset, MINUTES_PER_DAY) <= session.length
    if not np.all(in_sess):
        log.info("%s: %d prices outside the session window ignored", series.asset_id, int((~in_sess).sum()))

    pos = np.flatnonzero(in_sess)
    segments = []
    if pos.size == 0:
        return segments
    breaks = np.flatnonzero(np.diff(sday[pos]) != 0) + 1
    epoch = _dt.date(1970, 1, 1)
    for grp in np.split(pos, breaks):
        i0, i1 = int(grp[0]), int(grp[-1])
        day = int(sday[i0])
        lo, hi = i0 + 1, i1            # returns ending at prices i0+2..i1 -> return index i0+1..i1-1
        seg_idx = np.arange(lo, hi)
        seg_idx = seg_idx[np.isfinite(vals[seg_idx])]
        if seg_idx.size == 0:
            log.warning("%s: session on day %d has no usable returns, skipped", series.asset_id, day)
            continue
        overnight = (int(ret_ts[i0 - 1]), float(vals[i0 - 1])) if i0 > 0 else None
        first = (int(ret_ts[i0]), float(vals[i0])) if i1 > i0 else None
        segments.append(TradingDaySegment(
            series.asset_id, day, epoch + _dt.timedelta(days=day),
            ret_ts[seg_idx], vals[seg_idx], exc[seg_idx], first, overnight))
    return segments

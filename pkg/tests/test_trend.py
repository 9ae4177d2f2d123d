import datetime as dt
import json
import math

import numpy as np
import pytest

from trendlab.errors import ConfigError, DataError
from trendlab.ingest import PriceSeries, TradingDaySegment, compute_returns
from trendlab.trend import (MODES, Panel, TrendConfig, TrendState, build_panel, horizon_grid,
                            kernel_normalization, kernel_weights, mean_lookback, panel_from_returns,
                            trend_raw, trend_series)

ALL_GRIDS = [T for f in ("minute", "daily", "monthly", "yearly") for T in horizon_grid(f)]


def _direct_weights(T, n_max):
    n = np.arange(n_max, dtype=float)
    w = n * np.exp(-2.0 * n / T)
    return w / math.sqrt(np.sum(w ** 2))


def _convolve(x, T):
    """phi(t) = sum_{n<=t} w(n) x(t-n), kernel summed directly up to a generous cutoff."""
    n_max = min(len(x), int(60 * T) + 10)
    w = _direct_weights(T, n_max) if n_max > 40 * T else kernel_weights(T, np.arange(n_max))
    return np.convolve(x, w)[:len(x)]


def test_horizon_grids():
    assert horizon_grid("minute")[0] == 2 and horizon_grid("minute")[-1] == 1024
    assert horizon_grid("daily", [1, 10]) == (2.0, 1024.0)
    assert horizon_grid("monthly") == tuple(1.5 * 2 ** k for k in range(1, 9))
    assert len(horizon_grid("yearly")) == 7


def test_normalization_t2_matches_direct_sum():
    n = np.arange(10 ** 6, dtype=float)
    direct = np.sum(n ** 2 * np.exp(-4.0 * n / 2.0)) ** -0.5
    assert kernel_normalization(2.0) == pytest.approx(direct, rel=1e-12)
    assert kernel_normalization(2.0) == pytest.approx(2.0512, abs=1e-4)


@pytest.mark.parametrize("T", ALL_GRIDS)
def test_unit_sum_of_squares(T):
    n = np.arange(int(60 * T) + 100)
    assert np.sum(kernel_weights(T, n) ** 2) == pytest.approx(1.0, abs=1e-10)
    assert kernel_weights(T, 0) == 0.0


def test_normalization_rejects_short_horizon():
    with pytest.raises(ConfigError):
        kernel_normalization(1.5)


@pytest.mark.parametrize("T, expected", [(16, 17.02), (64, 65.0)])
def test_mean_lookback_against_direct_sum(T, expected):
    n = np.arange(int(80 * T), dtype=float)
    w = n * np.exp(-2.0 * n / T)
    direct = np.sum((n + 1) * w) / np.sum(w)
    assert mean_lookback(T) == pytest.approx(direct, rel=1e-10)
    assert round(mean_lookback(T), 2 if T == 16 else 1) == expected


def test_mean_lookback_offset_shrinks():
    Ts = np.geomspace(4, 4096, 40)
    off = np.array([mean_lookback(T) - (T + 1) for T in Ts])
    assert np.all((off >= 0) & (off <= 0.2))
    assert np.all(np.diff(off) < 0)
    assert mean_lookback(1e6) / 1e6 == pytest.approx(1.0, rel=1e-5)


@pytest.mark.parametrize("T", ALL_GRIDS)
def test_recursion_equals_convolution(T):
    x = np.random.default_rng(int(T * 10)).standard_normal(10 ** 4)
    rec = trend_raw(x, T)
    conv = _convolve(x, T)
    w = min(int(math.ceil(5 * T)), len(x))
    assert np.max(np.abs(rec[w:] - conv[w:]), initial=0.0) <= 1e-9


def test_impulse_response():
    x = np.zeros(40)
    x[5] = 1.0
    phi = trend_raw(x, 8.0)
    n = np.arange(35)
    np.testing.assert_allclose(phi[5:], kernel_normalization(8.0) * n * np.exp(-n / 4.0), rtol=1e-12, atol=1e-15)
    assert int(np.argmax(phi)) == 5 + 4


def test_streaming_state_matches_vector():
    x = np.random.default_rng(1).standard_normal(300)
    st = TrendState(16.0)
    stream = [st.update(v) for v in x]
    np.testing.assert_allclose(stream, trend_raw(x, 16.0), rtol=1e-12)


def test_zero_input_and_unit_variance():
    ts, phi = trend_series(np.zeros(500), 8.0)
    assert np.all(phi == 0) and ts[0] == 40
    x = np.random.default_rng(2).standard_normal(10 ** 6)
    assert 0.97 <= np.std(trend_raw(x, 32.0)[200:]) <= 1.03


def test_clipping_and_warmup():
    x = np.full(200, 3.0)
    ts, phi = trend_series(x, 4.0, TrendConfig(horizons=(4.0,), clip_phi=2.5))
    assert np.max(np.abs(phi)) == 2.5
    assert len(phi) == 200 - 20


def test_short_series_warns(caplog):
    ts, phi = trend_series(np.ones(10), 8.0)
    assert len(phi) == 0 and "shorter than warm-up" in caplog.text


def test_shift_equivariance():
    T = 16.0
    x = np.random.default_rng(3).standard_normal(500)
    ts, phi = trend_series(x, T, timestamps=np.arange(1000, 1500))
    pad = np.concatenate([np.zeros(100), x])
    ts2, phi2 = trend_series(pad, T, timestamps=np.arange(900, 1500))
    keep = np.isin(ts2, ts)
    np.testing.assert_allclose(phi2[keep], phi, atol=1e-9)


def _returns(n, seed, asset="X", frequency="daily", start=0):
    rng = np.random.default_rng(seed)
    p = 100 * np.exp(np.concatenate([[0.0], np.cumsum(0.01 * rng.standard_normal(n))]))
    return compute_returns(PriceSeries(asset, frequency, np.arange(start, start + n + 1), p))


def test_panel_layout_and_alignment():
    cfg = TrendConfig(horizons=(2.0, 8.0))
    r = _returns(300, 4)
    p = build_panel([r], cfg)
    assert p.timestamps[0] == r.timestamps[10]          # first horizon warm after 5*2 returns
    assert np.isnan(p.phi[0, 1]) and np.all(np.isfinite(p.phi[30:]))
    i = np.searchsorted(r.timestamps, p.timestamps)
    np.testing.assert_array_equal(p.response, r.values[i + 1])
    assert p.n_rows == 300 - 10 - 1
    assert np.all(np.abs(p.phi[np.isfinite(p.phi)]) <= 2.5)


def test_lag_shifts_responses():
    cfg0, cfg1 = TrendConfig(horizons=(4.0,)), TrendConfig(horizons=(4.0,), lag=1)
    r = _returns(200, 5)
    p0, p1 = build_panel([r], cfg0), build_panel([r], cfg1)
    assert p1.n_rows == p0.n_rows - 1
    np.testing.assert_array_equal(p1.response, p0.response[1:])
    np.testing.assert_array_equal(p1.phi, p0.phi[:-1])


def test_merge_orders_by_time_then_asset():
    cfg = TrendConfig(horizons=(2.0,))
    p = build_panel([_returns(50, 6, "B"), _returns(50, 7, "A", start=3)], cfg)
    key = p.timestamps * 10 + p.asset
    assert np.all(np.diff(key) > 0)
    assert p.assets == ["B", "A"]


def test_day_by_day_ramp_up_count():
    ts = np.arange(388)
    rng = np.random.default_rng(8)
    r = rng.standard_normal(388)
    seg = TradingDaySegment("X", 0, dt.date(2020, 1, 1), ts, r, r)
    p = build_panel([seg], TrendConfig(horizons=(8.0,)), "day_by_day")
    assert p.n_rows == 379
    assert p.timestamps[0] == 8
    np.testing.assert_allclose(p.phi[:, 0], np.clip(trend_raw(r, 8.0)[8:387], -2.5, 2.5))


def test_day_by_day_limits_and_input_types():
    seg = TradingDaySegment("X", 0, dt.date(2020, 1, 1), np.arange(10), np.zeros(10), np.zeros(10))
    with pytest.raises(ConfigError):
        build_panel([seg], TrendConfig(horizons=(128.0,)), "day_by_day")
    with pytest.raises(ConfigError):
        build_panel([seg], TrendConfig(horizons=(2.0,)), "continuous")
    with pytest.raises(ConfigError):
        build_panel([seg], TrendConfig(horizons=(2.0,)), "weekly")
    with pytest.raises(DataError):
        build_panel([], TrendConfig(horizons=(2.0,)))
    assert MODES == ("day_by_day", "continuous")


def test_inconsistent_frequencies():
    with pytest.raises(ConfigError, match="frequencies"):
        build_panel([_returns(50, 1), _returns(50, 2, "Y", "monthly")], TrendConfig(horizons=(2.0,)))


def test_panel_size_at_full_scale_is_about_two_million():
    # 24 assets x 30 years x 260 days x 10 horizons, minus warm-up
    cfg = TrendConfig(horizons=horizon_grid("daily"))
    n = 30 * 260
    pairs = sum(24 * max(n - 1 - cfg.warmup(T), 0) for T in cfg.horizons)
    assert 1.5e6 < pairs < 2.5e6


def test_panel_csv_round_trip(tmp_path):
    p = panel_from_returns([_returns(120, 9, "ES"), _returns(120, 10, "GC")], TrendConfig(horizons=(2.0, 4.0)))
    sidecar = p.to_csv(tmp_path / "panel.csv")
    meta = json.loads(sidecar.read_text())
    assert meta["horizons"] == [2.0, 4.0] and meta["phi_clipped_at"] == "emission"
    header = (tmp_path / "panel.csv").read_text().splitlines()[0]
    assert header == "timestamp,asset,phi_k1,phi_k2,response"
    back = Panel.from_csv(tmp_path / "panel.csv")
    np.testing.assert_array_equal(back.phi, p.phi)
    np.testing.assert_array_equal(back.response, p.response)
    assert back.assets == p.assets and back.horizons == p.horizons


def test_rebuild_excluding_reestimates_normalization():
    r = _returns(400, 11)
    p = panel_from_returns([r], TrendConfig(horizons=(4.0,)))
    rebuilt = p.source.rebuild_excluding(np.arange(200, 401))
    train = r.raw[r.raw_timestamps < 200]
    np.testing.assert_allclose(rebuilt.response, np.clip(r.raw, train.mean() - 20 * train.std(),
                                                          train.mean() + 20 * train.std())[21:] / train.std())

import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from trendlab.errors import ConfigError, DataError, SingularFitError
from trendlab.ingest import compute_returns
from trendlab.regress import (FEATURES, BootstrapConfig, ModelSpec, Subgroup, aggregate_scales, bootstrap,
                              cross_validate, day_stats, drop_feature_above, feature_matrix, fit,
                              fit_by_horizon, ols_fit, ols_stderr)
from trendlab.simulate import SimConfig, simulate_market
from trendlab.trend import Panel, TrendConfig, build_panel, panel_from_returns


def make_panel(phi, y, day=None, asset=None, horizons=None, frequency="daily", timestamps=None):
    phi = np.asarray(phi, dtype=float)
    phi = phi[:, None] if phi.ndim == 1 else phi
    n = len(y)
    asset = np.zeros(n, dtype=np.int64) if asset is None else np.asarray(asset, dtype=np.int64)
    names = [f"A{i}" for i in range(int(asset.max()) + 1)]
    ts = np.arange(n) if timestamps is None else np.asarray(timestamps)
    day = ts.copy() if day is None else np.asarray(day)
    horizons = tuple(2.0 ** (j + 1) for j in range(phi.shape[1])) if horizons is None else horizons
    return Panel(ts, asset, names, day, phi, np.asarray(y, dtype=float), horizons, frequency)


def normal_equations(phi, y, features):
    X = feature_matrix(phi, features)
    return np.linalg.inv(X.T @ X) @ (X.T @ y)


def test_noiseless_cubic_recovered_exactly():
    phi = np.random.default_rng(0).uniform(-2.5, 2.5, 10 ** 4)
    y = 0.01 + 0.013 * phi - 0.006 * phi ** 3
    r = ols_fit(make_panel(phi, y), ModelSpec.named("cubic"))
    assert r["a"].value == pytest.approx(0.01, abs=1e-12)
    assert r["b"].value == pytest.approx(0.013, abs=1e-12)
    assert r["c"].value == pytest.approx(-0.006, abs=1e-12)
    assert r.r2_bp == pytest.approx(1e4)


@pytest.mark.parametrize("seed", range(5))
def test_small_instance_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-2.5, 2.5, 20)
    y = rng.normal(size=20)
    feats = MODELS_UNDER_TEST[seed % len(MODELS_UNDER_TEST)]
    r = ols_fit(make_panel(phi, y), ModelSpec(feats), min_rows_per_feature=1)
    np.testing.assert_allclose([c.value for c in r.coefficients.values()],
                               normal_equations(phi, y, ModelSpec(feats).features), atol=1e-9)


MODELS_UNDER_TEST = [("const", "phi"), ("const", "phi", "phi3"), ("const", "phi", "phi3", "sign_phi"),
                     ("const", "phi", "phi2", "phi3", "phi4")]


def test_row_count_guard_and_singular_design():
    with pytest.raises(DataError, match="too few"):
        ols_fit(make_panel(np.linspace(-1, 1, 20), np.zeros(20)))
    with pytest.raises(SingularFitError) as exc:
        ols_fit(make_panel(np.full(100, 0.7), np.arange(100.0)), ModelSpec.named("linear"))
    assert exc.value.feature == "phi"
    with pytest.raises(SingularFitError) as exc:
        phi = np.abs(np.random.default_rng(1).normal(size=200)) + 0.1
        ols_fit(make_panel(phi, phi), ModelSpec(("const", "phi", "sign_phi")))
    assert exc.value.feature == "sign_phi"


def test_spec_validation():
    assert ModelSpec(("phi",)).features == ("const", "phi")
    with pytest.raises(ConfigError):
        ModelSpec(("phi", "phi7"))
    with pytest.raises(ConfigError):
        ModelSpec(("phi", "phi"))
    with pytest.raises(ConfigError):
        ModelSpec.named("septic")
    assert feature_matrix([0.0], ["sign_phi"])[0, 0] == 0.0


def test_pure_noise_r2_is_tiny():
    rng = np.random.default_rng(2)
    phi = np.clip(rng.normal(size=10 ** 6), -2.5, 2.5)
    r = ols_fit(make_panel(phi, rng.normal(size=10 ** 6)), ModelSpec.named("cubic"))
    assert 0 <= r.r2_bp <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(40, 400))
def test_residuals_orthogonal_and_r2_monotone(seed, n):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-2.5, 2.5, n)
    y = 0.1 * phi + rng.normal(size=n)
    p = make_panel(phi, y)
    feats = ("const", "phi", "phi3", "phi5")
    r = ols_fit(p, ModelSpec(feats), min_rows_per_feature=5)
    X = feature_matrix(phi, feats)
    beta = np.array([c.value for c in r.coefficients.values()])
    resid = y - X @ beta
    assert np.max(np.abs(X.T @ resid)) <= 1e-8 * np.linalg.norm(X, axis=0).max() * np.linalg.norm(y)
    smaller = ols_fit(p, ModelSpec(feats[:3]), min_rows_per_feature=5)
    assert r.r2_bp >= smaller.r2_bp - 1e-9


def test_antisymmetry_under_sign_flip():
    rng = np.random.default_rng(3)
    phi = rng.uniform(-2.5, 2.5, 3000)
    y = 0.02 + 0.1 * phi + 0.03 * phi ** 2 - 0.02 * np.sign(phi) + rng.normal(size=3000)
    feats = ("const", "phi", "phi2", "phi3", "sign_phi")
    a = ols_fit(make_panel(phi, y), ModelSpec(feats))
    b = ols_fit(make_panel(-phi, -y), ModelSpec(feats))
    for name in a.coefficients:
        va, vb = a[name].value, b[name].value
        assert abs(va) == pytest.approx(abs(vb), rel=1e-9)
        # odd powers keep their coefficient, even powers (and the intercept) flip it
        assert vb == pytest.approx(va if name in ("b", "c", "e") else -va, rel=1e-9)


def test_day_stats_reproduce_totals():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=(500, 2))
    phi[:20, 1] = np.nan
    y = rng.normal(size=500)
    p = make_panel(phi, y, day=np.arange(500) // 7)
    spec = ModelSpec(("const", "phi", "phi3", "sign_phi"))
    st_ = day_stats(p, spec)
    ok = np.isfinite(phi)
    X = feature_matrix(phi[ok], spec.features)
    yy = np.repeat(y[:, None], 2, 1)[ok]
    xtx, xty = st_.total()
    np.testing.assert_allclose(xtx, X.T @ X, rtol=1e-12)
    np.testing.assert_allclose(xty, X.T @ yy, rtol=1e-10, atol=1e-10)
    assert st_.n.sum() == ok.sum() and len(st_.days) == 72


# --- bootstrap ----------------------------------------------------------------

def _iid_panel(n, seed, per_day=10):
    rng = np.random.default_rng(seed)
    phi = np.clip(rng.normal(size=n), -2.5, 2.5)
    y = 0.05 + 0.1 * phi - 0.02 * phi ** 3 + rng.normal(size=n)
    return make_panel(phi, y, day=np.arange(n) // per_day)


def test_bootstrap_config_guards():
    with pytest.raises(ConfigError):
        BootstrapConfig(1)
    with pytest.raises(ConfigError):
        BootstrapConfig(100, unit="row")
    with pytest.raises(DataError, match="distinct days"):
        bootstrap(_iid_panel(290, 0), ModelSpec.named("cubic"), BootstrapConfig(100))


def test_bootstrap_deterministic_across_workers(monkeypatch):
    p = _iid_panel(5000, 1)
    spec = ModelSpec.named("cubic")
    monkeypatch.setenv("TRENDLAB_THREADS", "1")
    a = bootstrap(p, spec, BootstrapConfig(300, seed=9))
    monkeypatch.setenv("TRENDLAB_THREADS", "4")
    b = bootstrap(p, spec, BootstrapConfig(300, seed=9))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.to_json() == b.to_json()
    c = bootstrap(p, spec, BootstrapConfig(300, seed=10))
    assert not np.array_equal(a.samples, c.samples)


def test_bootstrap_replicates_are_day_resampled_refits():
    p = _iid_panel(600, 2, per_day=3)
    spec = ModelSpec.named("linear")
    res = bootstrap(p, spec, BootstrapConfig(100, seed=5))
    from trendlab import _rng
    draw = _rng.stream(5, _rng.BOOTSTRAP, 17).integers(0, 200, size=200)
    rows = np.concatenate([np.flatnonzero(p.day == d) for d in draw])
    oracle = normal_equations(p.phi[rows, 0], p.response[rows], spec.features)
    np.testing.assert_allclose(res.samples[17], oracle, rtol=1e-9)


def test_bootstrap_stderr_matches_iid_formula():
    p = _iid_panel(10 ** 5, 3, per_day=1)
    spec = ModelSpec.named("cubic")
    res = bootstrap(p, spec, BootstrapConfig(1000, seed=1))
    classic = ols_stderr(p, spec)
    boot = np.array([c.stderr for c in res.coefficients.values()])
    np.testing.assert_allclose(boot, classic, rtol=0.15)
    assert all(np.isfinite(c.t) for c in res.coefficients.values())


def test_fit_result_serialization():
    res = fit(_iid_panel(3000, 4), ModelSpec.named("cubic"), BootstrapConfig(100, seed=2), k_folds=5)
    doc = json.loads(res.to_json())
    assert set(doc) >= {"coefficients", "r2_bp", "r2_adj_bp", "n_rows", "spec", "seed"}
    assert set(doc["coefficients"]["b"]) == {"value", "stderr", "t"}
    assert doc["seed"] == 2 and doc["n_rows"] == 3000
    lines = res.samples_csv().splitlines()
    assert lines[0] == "sample,a,b,c" and len(lines) == 101
    half = res.rescaled(0.5)
    assert half["b"].t == pytest.approx(res["b"].t, rel=1e-12)


# --- cross-validation ------------------------------------------------------------

def test_noiseless_cv_equals_in_sample():
    phi = np.random.default_rng(5).uniform(-2.5, 2.5, 3000)
    y = 0.01 + 0.013 * phi - 0.006 * phi ** 3
    p = make_panel(phi, y)
    r = fit(p, ModelSpec.named("cubic"), k_folds=15)
    assert r.r2_adj_bp == pytest.approx(r.r2_bp, abs=0.1)


def test_cv_guards():
    p = _iid_panel(100, 6)
    with pytest.raises(ConfigError):
        cross_validate(p, ModelSpec(), 1)
    with pytest.raises(DataError):
        cross_validate(p, ModelSpec(), 15)


def test_pure_noise_cv_is_not_positive_on_average():
    rng = np.random.default_rng(7)
    scores = []
    for _ in range(100):
        phi = np.clip(rng.normal(size=1500), -2.5, 2.5)
        scores.append(cross_validate(make_panel(phi, rng.normal(size=1500)), ModelSpec.named("cubic"), 15))
    scores = np.array(scores)
    assert scores.mean() + 2 * scores.std() / 10 < 0


def _cv_oracle(panel, features, k):
    """Refit per fold on a panel rebuilt from training-day normalization, pooled out-of-sample R^2."""
    days = np.unique(panel.day)
    sse = sst = 0.0
    for test_days in np.array_split(days, k):
        rb = panel.source.rebuild_excluding(test_days)
        phi, y, day = rb.pairs()[:3]
        test = np.isin(day, test_days)
        beta = normal_equations(phi[~test], y[~test], features)
        ybar = y[~test].mean()
        pred = feature_matrix(phi[test], features) @ beta
        sse += np.sum((y[test] - pred) ** 2)
        sst += np.sum((y[test] - ybar) ** 2)
    return (1 - sse / sst) * 1e4


def test_cv_rebuilds_normalization_per_fold():
    cfg = SimConfig(b=0.05, c=-0.01, T=(4.0, 8.0), n_assets=3, n_intervals=1500, seed=3)
    rets = [compute_returns(s) for s in simulate_market(cfg)]
    p = panel_from_returns(rets, TrendConfig(horizons=(4.0, 8.0)))
    spec = ModelSpec.named("cubic")
    got = cross_validate(p, spec, 6)
    assert got == pytest.approx(_cv_oracle(p, spec.features, 6), rel=1e-9, abs=1e-9)
    assert got != pytest.approx(cross_validate(p, spec, 6, rebuild=False), rel=1e-6)


# --- aggregation, per-horizon and subgroup fits -------------------------------------

def test_aggregate_scales():
    phi = np.random.default_rng(8).normal(size=(50, 1))
    p = make_panel(np.hstack([phi, phi, phi]), np.zeros(50))
    np.testing.assert_allclose(aggregate_scales(p).phi[:, 0], phi[:, 0])
    q = make_panel(np.array([[1.0, -1.0]] * 5), np.zeros(5))
    assert np.all(aggregate_scales(q).phi == 0)
    with pytest.raises(ConfigError):
        aggregate_scales(make_panel(phi, np.zeros(50)))


def test_per_horizon_template_drops_quintic():
    rng = np.random.default_rng(9)
    phi = np.clip(rng.normal(size=(4000, 2)), -2.5, 2.5)
    p = make_panel(phi, rng.normal(size=4000), horizons=(64.0, 128.0))
    out = fit_by_horizon(p, ModelSpec.named("quintic"), template=drop_feature_above("phi5", 64))
    assert [T for T, _ in out] == [64.0, 128.0]
    assert "d" in out[0][1].coefficients and "d" not in out[1][1].coefficients


def test_per_horizon_failures_are_not_fatal(caplog):
    rng = np.random.default_rng(10)
    phi = rng.normal(size=(500, 2))
    phi[:, 1] = 0.3
    out = fit_by_horizon(make_panel(phi, rng.normal(size=500)), ModelSpec.named("linear"))
    assert [T for T, _ in out] == [2.0]
    assert "failed" in caplog.text


def test_per_horizon_profile_recovery():
    profile = {4.0: 0.03, 16.0: -0.02, 64.0: 0.01}
    for T, b in profile.items():
        cfg = SimConfig(b=b, T=T, n_assets=4, n_intervals=60_000, seed=int(T))
        rets = [compute_returns(s) for s in simulate_market(cfg)]
        p = build_panel(rets, TrendConfig(horizons=(T,)))
        ((T_fit, res),) = fit_by_horizon(p, ModelSpec.named("linear"), BootstrapConfig(300, seed=1))
        assert T_fit == T
        # 2 stderr per horizon, Bonferroni-corrected for the three horizons
        assert abs(res["b"].value - b) < norm.ppf(1 - 0.05 / (2 * len(profile))) * res["b"].stderr


def test_subgroup_mixture():
    on = SimConfig(b=0.04, T=8.0, n_assets=3, n_intervals=40_000, seed=1)
    off = SimConfig(b=0.0, T=8.0, n_assets=3, n_intervals=40_000, seed=2)
    rets = [dataclasses.replace(compute_returns(s), asset_id=f"EQ{i}") for i, s in enumerate(simulate_market(on))]
    rets += [dataclasses.replace(compute_returns(s), asset_id=f"FX{i}") for i, s in enumerate(simulate_market(off))]
    p = build_panel(rets, TrendConfig(horizons=(8.0,)))
    eq = Subgroup.from_classes({"EQ0": "equities", "EQ1": "equities", "EQ2": "equities", "FX0": "fx"}, "equities")
    boot = BootstrapConfig(300, seed=3)
    sub = fit(p, ModelSpec.named("linear", subgroup=eq, grouping="subgroup"), boot)
    pooled = fit(p, ModelSpec.named("linear"), boot)
    assert sub["b"].value > 0 and sub["b"].t >= 2
    assert 0 < pooled["b"].value < sub["b"].value
    assert sub.n_rows < pooled.n_rows
    with pytest.raises(ConfigError):
        Subgroup.from_classes({"X": "fx"}, "equities")


def test_session_window_subgroup():
    ts = np.arange(0, 2880, 10)
    p = make_panel(np.zeros(len(ts)), np.zeros(len(ts)), timestamps=ts, frequency="minute")
    m = Subgroup("us", window=(870, 1260)).mask(p)
    np.testing.assert_array_equal(m, (ts % 1440 >= 870) & (ts % 1440 < 1260))
    wrap = Subgroup("asia", window=(1380, 60)).mask(p)
    assert wrap.sum() == 2 * (6 + 6)
    with pytest.raises(ConfigError):
        Subgroup("us", window=(0, 10)).mask(make_panel(np.zeros(3), np.zeros(3)))


def test_equal_asset_weighting_matches_weighted_oracle():
    rng = np.random.default_rng(11)
    n0, n1 = 300, 900
    phi = rng.normal(size=n0 + n1)
    asset = np.r_[np.zeros(n0), np.ones(n1)].astype(int)
    y = np.where(asset == 0, 0.5, -0.1) * phi + rng.normal(size=n0 + n1)
    p = make_panel(phi, y, asset=asset)
    r = ols_fit(p, ModelSpec.named("linear", weighting="equal_asset"))
    w = np.where(asset == 0, 1 / n0, 1 / n1)
    X = feature_matrix(phi, ("const", "phi"))
    oracle = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
    np.testing.assert_allclose([r["a"].value, r["b"].value], oracle, rtol=1e-10)
    rows = ols_fit(p, ModelSpec.named("linear"))
    assert rows["b"].value < r["b"].value


def test_feature_names_cover_all():
    spec = ModelSpec(FEATURES)
    assert spec.names == ["a", "b", "c2", "c", "c4", "d", "e"]

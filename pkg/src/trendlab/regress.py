"""Polynomial regressions of the next return on trend strength.

Point estimates come from a Householder QR accumulated chunk by chunk, so
panels with tens of millions of (row, horizon) pairs never materialize a
full design matrix. Errors come from resampling whole days: the design is
reduced once to per-day sufficient statistics ``X'X`` and ``X'y``, after
which every bootstrap replicate or cross-validation fold is a weighted sum
over days followed by a small solve.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numba as nb
import numpy as np
from scipy.linalg import solve_triangular

from . import _rng
from ._parallel import ordered_map
from .errors import ConfigError, DataError, SingularFitError
from .trend import Panel

log = logging.getLogger(__name__)

FEATURES = ("const", "phi", "phi2", "phi3", "phi4", "phi5", "sign_phi")
COEF_NAMES = {"const": "a", "phi": "b", "phi2": "c2", "phi3": "c", "phi4": "c4", "phi5": "d", "sign_phi": "e"}
MODELS = {
    "linear": ("const", "phi"),
    "cubic": ("const", "phi", "phi3"),
    "quintic": ("const", "phi", "phi3", "phi5", "sign_phi"),
    "general": ("const", "phi", "phi2", "phi3", "phi4", "phi5"),
}
GROUPINGS = ("pooled", "per_horizon", "subgroup")
WEIGHTINGS = ("rows", "equal_asset")
CHUNK_PAIRS = 1 << 17
REPLICATE_CHUNK = 64


def feature_matrix(phi, features) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    cols = []
    for f in features:
        if f == "const":
            cols.append(np.ones_like(phi))
        elif f == "phi":
            cols.append(phi)
        elif f == "sign_phi":
            cols.append(np.sign(phi))
        elif f in ("phi2", "phi3", "phi4", "phi5"):
            cols.append(phi ** int(f[-1]))
        else:
            raise ConfigError(f"unknown feature {f!r}; expected one of {FEATURES}")
    return np.column_stack(cols)


@dataclass(frozen=True)
class Subgroup:
    """Row filter by asset set and/or a clock window on minute timestamps (UTC minutes of day)."""

    name: str
    assets: frozenset | None = None
    window: tuple[int, int] | None = None

    @classmethod
    def from_classes(cls, classes: dict, name: str) -> "Subgroup":
        members = frozenset(a for a, c in classes.items() if c == name)
        if not members:
            raise ConfigError(f"no assets in class {name!r}")
        return cls(name, assets=members)

    def mask(self, panel: Panel) -> np.ndarray:
        keep = np.ones(panel.n_rows, dtype=bool)
        if self.assets is not None:
            codes = [i for i, a in enumerate(panel.assets) if a in self.assets]
            keep &= np.isin(panel.asset, codes)
        if self.window is not None:
            if panel.frequency != "minute":
                raise ConfigError("session-window subgroups need minute data")
            lo, hi = self.window
            clock = np.mod(panel.timestamps, 1440)
            keep &= (clock >= lo) & (clock < hi) if lo <= hi else (clock >= lo) | (clock < hi)
        return keep


@dataclass(frozen=True)
class ModelSpec:
    features: tuple = MODELS["cubic"]
    grouping: str = "pooled"
    subgroup: Subgroup | None = None
    horizons: tuple | None = None
    weighting: str = "rows"

    def __post_init__(self):
        feats = tuple(self.features)
        unknown = [f for f in feats if f not in FEATURES]
        if unknown:
            raise ConfigError(f"unknown features {unknown}; expected a subset of {FEATURES}")
        if len(set(feats)) != len(feats):
            raise ConfigError("duplicate features")
        if "const" not in feats:
            feats = ("const",) + feats
        object.__setattr__(self, "features", feats)
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"unknown grouping {self.grouping!r}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.horizons is not None:
            object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))

    @classmethod
    def named(cls, model: str, **kw) -> "ModelSpec":
        try:
            return cls(MODELS[model], **kw)
        except KeyError:
            raise ConfigError(f"unknown model {model!r}; expected one of {sorted(MODELS)}") from None

    @property
    def names(self) -> list[str]:
        return [COEF_NAMES[f] for f in self.features]

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "grouping": self.grouping,
            "subgroup": None if self.subgroup is None else {
                "name": self.subgroup.name,
                "assets": None if self.subgroup.assets is None else sorted(self.subgroup.assets),
                "window": None if self.subgroup.window is None else list(self.subgroup.window)},
            "horizons": None if self.horizons is None else list(self.horizons),
            "weighting": self.weighting,
        }


@dataclass
class BootstrapConfig:
    n_samples: int = 5000
    seed: int = 0
    unit: str = "day"

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigError("bootstrap needs at least 2 samples for a standard error")
        if self.n_samples < 100:
            log.warning("only %d bootstrap samples; standard errors will be noisy", self.n_samples)
        if self.unit != "day":
            raise ConfigError("only whole-day resampling is supported")


@dataclass
class Coefficient:
    value: float
    stderr: float = float("nan")

    @property
    def t(self) -> float:
        return self.value / self.stderr if self.stderr > 0 else float("nan")


@dataclass
class FitResult:
    coefficients: dict
    r2_bp: float
    n_rows: int
    spec: ModelSpec
    r2_adj_bp: float | None = None
    seed: int | None = None
    n_bootstrap: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, name) -> Coefficient:
        return self.coefficients[name]

    def to_dict(self) -> dict:
        return {
            "coefficients": {k: {"value": c.value, "stderr": _jsonable(c.stderr), "t": _jsonable(c.t)}
                             for k, c in self.coefficients.items()},
            "r2_bp": self.r2_bp,
            "r2_adj_bp": self.r2_adj_bp,
            "n_rows": self.n_rows,
            "n_bootstrap": self.n_bootstrap,
            "spec": self.spec.to_dict(),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def samples_csv(self) -> str:
        """Bootstrap distribution as ``sample,a,b,c,...`` text."""
        if self.samples is None:
            raise DataError("fit has no bootstrap samples")
        names = list(self.coefficients)
        lines = ["sample," + ",".join(names)]
        lines += [f"{i}," + ",".join(repr(float(v)) for v in row) for i, row in enumerate(self.samples)]
        return "\n".join(lines) + "\n"

    def rescaled(self, factor: float) -> "FitResult":
        coefs = {k: Coefficient(c.value * factor, c.stderr * factor) for k, c in self.coefficients.items()}
        samples = None if self.samples is None else self.samples * factor
        return replace(self, coefficients=coefs, samples=samples)


def _jsonable(x):
    return None if not np.isfinite(x) else float(x)


# --- data access -----------------------------------------------------------

def _prepare(panel: Panel, spec: ModelSpec):
    """Row mask, selected horizon columns and per-row pair weights for a spec."""
    if panel.n_rows == 0:
        raise DataError("empty panel")
    rows = np.ones(panel.n_rows, dtype=bool) if spec.subgroup is None else spec.subgroup.mask(panel)
    if spec.horizons is None or panel.transform == "aggregate":
        cols = np.arange(panel.K)
    else:
        lookup = {float(T): j for j, T in enumerate(panel.horizons)}
        missing = [T for T in spec.horizons if T not in lookup]
        if missing:
            raise ConfigError(f"horizons {missing} not in panel {list(panel.horizons)}")
        cols = np.array([lookup[T] for T in spec.horizons])
    asset_w = None
    if spec.weighting == "equal_asset":
        counts = np.bincount(panel.asset[rows], weights=np.isfinite(panel.phi[rows][:, cols]).sum(1),
                             minlength=len(panel.assets))
        present = counts > 0
        asset_w = np.zeros(len(counts))
        asset_w[present] = counts.sum() / (present.sum() * counts[present])
    return np.flatnonzero(rows), cols, asset_w


def _chunks(panel: Panel, spec: ModelSpec, prep=None):
    """Yield ``(X, y, day, w)`` for the long-format pairs of ``panel`` under ``spec``."""
    rows, cols, asset_w = prep if prep is not None else _prepare(panel, spec)
    step = max(1, CHUNK_PAIRS // len(cols))
    for s in range(0, len(rows), step):
        r = rows[s:s + step]
        phi = panel.phi[r][:, cols]
        ok = np.isfinite(phi)
        rr, cc = np.nonzero(ok)
        if rr.size == 0:
            continue
        x = phi[rr, cc]
        y = panel.response[r][rr]
        day = panel.day[r][rr]
        w = None if asset_w is None else asset_w[panel.asset[r][rr]]
        yield feature_matrix(x, spec.features), y, day, w


@dataclass
class _QR:
    R: np.ndarray
    qty: np.ndarray
    yty: float
    ysum: float
    wsum: float
    colsq: np.ndarray
    n: int


def _qr_accumulate(chunks, p) -> _QR:
    R = np.zeros((0, p))
    qty = np.zeros(0)
    yty = ysum = wsum = 0.0
    colsq = np.zeros(p)
    n = 0
    for X, y, _, w in chunks:
        if w is not None:
            sw = np.sqrt(w)
            ysum += float(np.dot(w, y))
            wsum += float(w.sum())
            X, y = X * sw[:, None], y * sw
        else:
            ysum += float(y.sum())
            wsum += float(len(y))
        n += len(y)
        yty += float(np.dot(y, y))
        colsq += np.einsum("ij,ij->j", X, X)
        Q, R = np.linalg.qr(np.vstack([R, X]))
        qty = Q.T @ np.concatenate([qty, y])
    return _QR(R, qty, yty, ysum, wsum, colsq, n)


def _check_rank(R, colsq, features, tol=1e-10):
    diag = np.abs(np.diag(R)) if R.shape[0] == R.shape[1] else np.zeros(len(features))
    for j, f in enumerate(features):
        if diag[j] <= tol * np.sqrt(colsq[j]) or colsq[j] == 0:
            raise SingularFitError(f)


def _solve_qr(acc: _QR, features):
    p = len(features)
    if acc.n < p or acc.R.shape[0] < p:
        raise SingularFitError(features[min(acc.n, p - 1)], f"{acc.n} rows cannot identify {p} coefficients")
    _check_rank(acc.R, acc.colsq, features)
    beta = solve_triangular(acc.R, acc.qty[:p])
    sse = max(acc.yty - float(np.dot(acc.qty[:p], acc.qty[:p])), 0.0)
    sst = acc.yty - acc.ysum ** 2 / acc.wsum
    r2 = 1.0 - sse / sst if sst > 0 else 0.0
    return beta, max(r2, 0.0) * 1e4


def ols_fit(panel: Panel, spec: ModelSpec | None = None, min_rows_per_feature: int = 10) -> FitResult:
    """Least-squares fit of the response on the spec's features, pooled over the selected horizons.

    Raises
    ------
    SingularFitError
        If a feature is (numerically) a linear combination of earlier ones.
    """
    spec = spec or ModelSpec()
    p = len(spec.features)
    acc = _qr_accumulate(_chunks(panel, spec), p)
    if acc.n <= min_rows_per_feature * p:
        raise DataError(f"{acc.n} rows is too few for {p} features (need > {min_rows_per_feature * p})")
    beta, r2 = _solve_qr(acc, spec.features)
    coefs = {name: Coefficient(float(b)) for name, b in zip(spec.names, beta)}
    return FitResult(coefs, float(r2), acc.n, spec)


# --- per-day sufficient statistics ------------------------------------------

@dataclass
class DayStats:
    days: np.ndarray
    xtx: np.ndarray      # (D, p, p)
    xty: np.ndarray      # (D, p)
    yty: np.ndarray      # (D,)
    ysum: np.ndarray
    wsum: np.ndarray
    n: np.ndarray

    def total(self, weights=None):
        if weights is None:
            return self.xtx.sum(0), self.xty.sum(0)
        return np.tensordot(weights, self.xtx, 1), weights @ self.xty

    def __add__(self, other: "DayStats") -> "DayStats":
        if not np.array_equal(self.days, other.days):
            raise DataError("day statistics over different day sets")
        return DayStats(self.days, self.xtx + other.xtx, self.xty + other.xty, self.yty + other.yty,
                        self.ysum + other.ysum, self.wsum + other.wsum, self.n + other.n)


_FEATURE_CODE = {f: i for i, f in enumerate(FEATURES)}


@nb.njit(cache=True, nogil=True)
def _day_accumulate(phi, y, dayidx, rows, cols, codes, roww, xtx, xty, yty, ysum, wsum, cnt):
    p = codes.shape[0]
    x = np.empty(p)
    for r in rows:
        d = dayidx[r]
        if d < 0:
            continue
        yr = y[r]
        w = roww[r]
        for c in cols:
            v = phi[r, c]
            if not np.isfinite(v):
                continue
            for i in range(p):
                code = codes[i]
                if code == 0:
                    x[i] = 1.0
                elif code == 6:
                    x[i] = 1.0 if v > 0 else (-1.0 if v < 0 else 0.0)
                else:
                    x[i] = v ** code
            for i in range(p):
                wx = w * x[i]
                xty[d, i] += wx * yr
                for j in range(i, p):
                    xtx[d, i, j] += wx * x[j]
            yty[d] += w * yr * yr
            ysum[d] += w * yr
            wsum[d] += w
            cnt[d] += 1
    for d in range(xtx.shape[0]):
        for i in range(p):
            for j in range(i):
                xtx[d, i, j] = xtx[d, j, i]


def day_stats(panel: Panel, spec: ModelSpec, days=None) -> DayStats:
    """Per-day ``X'X``, ``X'y`` and response sums over the spec's (row, horizon) pairs.

    ``days`` fixes the day axis (rows on other days are ignored); by default
    it is every day present among the selected rows.
    """
    rows, cols, asset_w = _prepare(panel, spec)
    if days is None:
        days = np.unique(panel.day[rows])
    days = np.asarray(days, dtype=np.int64)
    D, p = len(days), len(spec.features)
    pos = np.searchsorted(days, panel.day)
    pos = np.minimum(pos, max(D - 1, 0))
    dayidx = np.where((D > 0) & (days[pos] == panel.day), pos, -1) if D else np.full(panel.n_rows, -1)
    roww = np.ones(panel.n_rows) if asset_w is None else asset_w[panel.asset]
    codes = np.array([_FEATURE_CODE[f] for f in spec.features], dtype=np.int64)
    xtx, xty = np.zeros((D, p, p)), np.zeros((D, p))
    yty, ysum, wsum, cnt = (np.zeros(D) for _ in range(4))
    _day_accumulate(np.ascontiguousarray(panel.phi, dtype=float), panel.response, dayidx.astype(np.int64),
                    rows.astype(np.int64), cols.astype(np.int64), codes, roww, xtx, xty, yty, ysum, wsum, cnt)
    return DayStats(days, xtx, xty, yty, ysum, wsum, cnt)


def _scaled_solve(xtx, xty, scale):
    """Solve batched normal equations after equilibrating columns by ``scale``."""
    s = scale[:, None] * scale[None, :]
    A = xtx / s
    b = xty / scale
    try:
        return np.linalg.solve(A, b[..., None])[..., 0] / scale
    except np.linalg.LinAlgError:
        return np.einsum("...ij,...j->...i", np.linalg.pinv(A), b) / scale


def bootstrap(panel: Panel, spec: ModelSpec | None = None, cfg: BootstrapConfig | None = None,
              min_days: int = 30) -> FitResult:
    """Point estimates with standard errors from resampling whole days.

    Every replicate draws ``D`` days with replacement (``D`` = number of
    distinct days) and refits; the same draw applies to all assets and
    horizons on those days. Replicate ``r`` uses its own counter-based stream
    keyed by ``(seed, r)``, so results do not depend on the worker count.
    """
    spec = spec or ModelSpec()
    cfg = cfg or BootstrapConfig()
    fit = ols_fit(panel, spec)
    st = day_stats(panel, spec)
    D = len(st.days)
    if D < min_days:
        raise DataError(f"bootstrap needs at least {min_days} distinct days, got {D}")
    p = len(spec.features)
    xtx_flat = st.xtx.reshape(D, p * p)
    scale = np.sqrt(np.diag(st.xtx.sum(0)))

    def run(chunk_start):
        idx = range(chunk_start, min(chunk_start + REPLICATE_CHUNK, cfg.n_samples))
        counts = np.empty((len(idx), D))
        for row, r in enumerate(idx):
            draw = _rng.stream(cfg.seed, _rng.BOOTSTRAP, r).integers(0, D, size=D)
            counts[row] = np.bincount(draw, minlength=D)
        A = (counts @ xtx_flat).reshape(len(idx), p, p)
        return _scaled_solve(A, counts @ st.xty, scale)

    samples = np.vstack(ordered_map(run, range(0, cfg.n_samples, REPLICATE_CHUNK)))
    se = samples.std(axis=0, ddof=1)
    coefs = {name: Coefficient(c.value, float(s)) for (name, c), s in zip(fit.coefficients.items(), se)}
    return replace(fit, coefficients=coefs, seed=cfg.seed, n_bootstrap=cfg.n_samples, samples=samples)


# --- cross-validation --------------------------------------------------------

def _folds(days, k):
    return np.array_split(np.asarray(days), k)


def _fold_score(st: DayStats, test_days, p):
    test = np.isin(st.days, test_days)
    if st.n[test].sum() < p:
        raise DataError(f"fold with {int(st.n[test].sum())} rows, fewer than {p} features")
    train = ~test
    xtx, xty = st.xtx[train].sum(0), st.xty[train].sum(0)
    scale = np.sqrt(np.diag(xtx))
    if np.any(scale == 0):
        raise DataError("training fold leaves a feature identically zero")
    beta = _scaled_solve(xtx, xty, scale)
    ybar = st.ysum[train].sum() / st.wsum[train].sum()
    t_xtx, t_xty = st.xtx[test].sum(0), st.xty[test].sum(0)
    t_yty, t_ysum, t_w = st.yty[test].sum(), st.ysum[test].sum(), st.wsum[test].sum()
    sse = t_yty - 2.0 * beta @ t_xty + beta @ t_xtx @ beta
    sst = t_yty - 2.0 * ybar * t_ysum + ybar * ybar * t_w
    return sse, sst


def _rebuilt_stats(panel: Panel, spec: ModelSpec, test_days, days) -> DayStats:
    """Day statistics after re-estimating normalization without ``test_days``.

    The rebuilt panel is streamed one asset at a time, so memory stays at
    the size of a single asset's rows. Equal-asset weighting needs the whole
    panel for its weights and rebuilds it in one piece.
    """
    if spec.weighting == "equal_asset":
        rebuilt = panel.source.rebuild_excluding(test_days)
        if panel.transform == "aggregate":
            rebuilt = aggregate_scales(rebuilt)
        return day_stats(rebuilt, spec, days)
    total = None
    for part in panel.source.iter_rebuilt(test_days):
        if panel.transform == "aggregate":
            part = aggregate_scales(part)
        if part.n_rows == 0:
            continue
        st = day_stats(part, spec, days)
        total = st if total is None else total + st
    if total is None:
        raise DataError("rebuilt panel is empty")
    return total


def cross_validate(panel: Panel, spec: ModelSpec | None = None, k_folds: int = 15, rebuild: bool = True) -> float:
    """Out-of-sample R^2 in basis points from ``k_folds`` contiguous blocks of days.

    When the panel remembers its source returns and ``rebuild`` is true, every
    fold re-estimates each asset's mean and volatility from the training days
    only and rebuilds trend strengths and responses before fitting. The
    squared errors and total sums of squares (around the training mean) are
    pooled over folds, so the result may be negative.
    """
    spec = spec or ModelSpec()
    if k_folds < 2:
        raise ConfigError("k_folds must be >= 2")
    p = len(spec.features)
    rows = _prepare(panel, spec)[0]
    days = np.unique(panel.day[rows])
    if len(days) < k_folds:
        raise DataError(f"{len(days)} days cannot form {k_folds} folds")
    folds = _folds(days, k_folds)
    if rebuild and panel.source is not None:
        parts = ordered_map(lambda td: _fold_score(_rebuilt_stats(panel, spec, td, days), td, p), folds)
    else:
        st = day_stats(panel, spec)
        parts = [_fold_score(st, td, p) for td in folds]
    sse = sum(a for a, _ in parts)
    sst = sum(b for _, b in parts)
    return float((1.0 - sse / sst) * 1e4)


# --- convenience wrappers ---------------------------------------------------

def aggregate_scales(panel: Panel) -> Panel:
    """Replace the K trend strengths by their equally weighted mean (rows with all K defined)."""
    if panel.K < 2:
        raise ConfigError("aggregation needs at least two horizons")
    keep = np.isfinite(panel.phi).all(axis=1)
    out = panel.select(keep, keep_source=True)
    return replace(out, phi=out.phi.mean(axis=1, keepdims=True), transform="aggregate")


def fit(panel: Panel, spec: ModelSpec | None = None, bootstrap_cfg: BootstrapConfig | None = None,
        k_folds: int | None = None, rebuild: bool = True) -> FitResult:
    """OLS fit, optionally with bootstrap errors and cross-validated R^2."""
    spec = spec or ModelSpec()
    res = bootstrap(panel, spec, bootstrap_cfg) if bootstrap_cfg is not None else ols_fit(panel, spec)
    if k_folds:
        res.r2_adj_bp = cross_validate(panel, spec, k_folds, rebuild)
    return res


def drop_feature_above(feature: str, max_horizon: float) -> Callable:
    """Per-horizon template: remove ``feature`` for horizons above ``max_horizon``."""
    def template(T, spec):
        if T > max_horizon and feature in spec.features:
            return replace(spec, features=tuple(f for f in spec.features if f != feature))
        return spec
    return template


def fit_by_horizon(panel: Panel, spec: ModelSpec | None = None, bootstrap_cfg: BootstrapConfig | None = None,
                   k_folds: int | None = None, template: Callable | None = None,
                   rebuild: bool = True) -> list[tuple[float, FitResult]]:
    """Independent fit for every horizon of the panel.

    ``template(T, spec)`` may adjust the feature set per horizon. A horizon
    whose fit fails is logged and left out; the others still run.
    """
    spec = spec or ModelSpec()
    if panel.transform == "aggregate":
        raise ConfigError("per-horizon fits need a panel with separate horizons")
    out = []
    for T in panel.horizons:
        s = replace(spec, horizons=(T,), grouping="per_horizon")
        if template is not None:
            s = template(T, s)
        try:
            out.append((T, fit(panel, s, bootstrap_cfg, k_folds, rebuild)))
        except (DataError, SingularFitError, ConfigError) as exc:
            log.warning("fit for horizon %g failed: %s", T, exc)
    return out


def ols_stderr(panel: Panel, spec: ModelSpec) -> np.ndarray:
    """Textbook i.i.d. OLS standard errors; for comparison only, never used for t-statistics."""
    st = day_stats(panel, spec)
    xtx, xty = st.total()
    n = st.n.sum()
    beta = np.linalg.solve(xtx, xty)
    sse = st.yty.sum() - 2 * beta @ xty + beta @ xtx @ beta
    s2 = sse / (n - len(spec.features))
    return np.sqrt(np.diag(np.linalg.inv(xtx)) * s2)

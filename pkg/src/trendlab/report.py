"""Rescaled coefficient curves across data frequencies and plot-ready output."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .ingest import check_frequency
from .regress import FitResult
from .trend import MINUTES_PER_TRADING_DAY, TRADING_DAYS_PER_YEAR

DATASETS = ("intraday", "daily", "monthly", "yearly")
DATASET_FOR = {"minute": "intraday", "daily": "daily", "monthly": "monthly", "yearly": "yearly"}
MINUTES_PER = {
    "minute": 1.0,
    "daily": float(MINUTES_PER_TRADING_DAY),
    "monthly": MINUTES_PER_TRADING_DAY * TRADING_DAYS_PER_YEAR / 12.0,
    "yearly": float(MINUTES_PER_TRADING_DAY * TRADING_DAYS_PER_YEAR),
}
REFERENCE_MINUTES = 60.0
CURVE_COLUMNS = ("dataset", "T_minutes", "coef", "value", "stderr")


def fmt(x) -> str:
    """Six significant digits; empty for missing values."""
    if x is None or not np.isfinite(x):
        return ""
    return f"{float(x):.6g}"


def horizon_to_minutes(frequency: str, T: float) -> float:
    """Horizon in minutes, with 1024 minutes per trading day and 260 days per year."""
    check_frequency(frequency)
    if not T > 0:
        raise ConfigError(f"horizon must be positive, got {T}")
    return MINUTES_PER[frequency] * float(T)


def rescale_factor(T_minutes: float) -> float:
    return math.sqrt(T_minutes / REFERENCE_MINUTES)


def rescale_coefficients(fit: FitResult, T_minutes: float) -> FitResult:
    """Multiply every coefficient, its stderr and any bootstrap samples by ``sqrt(T_minutes/60)``."""
    return fit.rescaled(rescale_factor(T_minutes))


@dataclass(frozen=True)
class CurvePoint:
    dataset: str
    T_minutes: float
    coef: str
    value: float
    stderr: float

    @property
    def t(self) -> float:
        return self.value / self.stderr if self.stderr > 0 else float("nan")


@dataclass
class HorizonCurve:
    points: list = field(default_factory=list)
    rescaled: bool = False

    def rescale(self) -> "HorizonCurve":
        if self.rescaled:
            raise ConfigError("curve is already rescaled")
        pts = [replace(p, value=p.value * rescale_factor(p.T_minutes), stderr=p.stderr * rescale_factor(p.T_minutes))
               for p in self.points]
        return HorizonCurve(pts, True)

    def series(self, coef: str, dataset: str | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(T_minutes, value, stderr)`` for one coefficient, optionally one dataset."""
        pts = [p for p in self.points if p.coef == coef and (dataset is None or p.dataset == dataset)]
        return (np.array([p.T_minutes for p in pts]), np.array([p.value for p in pts]),
                np.array([p.stderr for p in pts]))

    def to_csv(self, path=None) -> str:
        lines = [",".join(CURVE_COLUMNS)]
        lines += [f"{p.dataset},{fmt(p.T_minutes)},{p.coef},{fmt(p.value)},{fmt(p.stderr)}" for p in self.points]
        return _emit("\n".join(lines) + "\n", path)

    def to_gnuplot(self, path=None) -> str:
        """One index block per (dataset, coefficient), columns ``T_minutes value stderr``."""
        blocks = []
        keys = list(dict.fromkeys((p.dataset, p.coef) for p in self.points))
        for ds, coef in keys:
            rows = [f"{fmt(p.T_minutes)} {fmt(p.value)} {fmt(p.stderr)}"
                    for p in self.points if p.dataset == ds and p.coef == coef]
            blocks.append(f"# dataset={ds} coef={coef} rescaled={int(self.rescaled)}\n" + "\n".join(rows))
        return _emit("\n\n\n".join(blocks) + "\n", path)

    def to_dict(self) -> dict:
        return {"rescaled": self.rescaled,
                "points": [{"dataset": p.dataset, "T_minutes": float(fmt(p.T_minutes)), "coef": p.coef,
                            "value": _num(p.value), "stderr": _num(p.stderr)} for p in self.points]}


def _num(x):
    s = fmt(x)
    return float(s) if s else None


def _emit(text: str, path) -> str:
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def assemble_curve(fits, rescale: bool = True) -> HorizonCurve:
    """Merge per-horizon fits from several datasets into one curve sorted by horizon in minutes.

    Parameters
    ----------
    fits : iterable of (dataset, frequency, [(T, FitResult), ...])
        ``dataset`` is one of ``intraday, daily, monthly, yearly``; ``T`` is
        in native units of ``frequency``.
    rescale : bool
        Apply the ``sqrt(T/60)`` rescaling to values and errors.
    """
    fits = list(fits)
    if not fits:
        raise DataError("no fits to assemble")
    pts, seen = [], set()
    for dataset, frequency, per_horizon in fits:
        if dataset not in DATASETS:
            raise ConfigError(f"unknown dataset tag {dataset!r}; expected one of {DATASETS}")
        for T, res in per_horizon:
            if (dataset, float(T)) in seen:
                raise DataError(f"duplicate horizon {T} for dataset {dataset}")
            seen.add((dataset, float(T)))
            Tm = horizon_to_minutes(frequency, T)
            for name, c in res.coefficients.items():
                pts.append(CurvePoint(dataset, Tm, name, c.value, c.stderr))
    if not pts:
        raise DataError("no fitted coefficients to assemble")
    pts.sort(key=lambda p: (p.T_minutes, DATASETS.index(p.dataset), p.coef))
    curve = HorizonCurve(pts, False)
    return curve.rescale() if rescale else curve


def run_bundle(config: dict | None = None, fits: dict | None = None, buckets: dict | None = None,
               curve: HorizonCurve | None = None) -> str:
    """JSON document combining one run's configuration, fits, bucket tables and curve."""
    doc = {
        "config": config or {},
        "fits": {k: v.to_dict() for k, v in (fits or {}).items()},
        "buckets": {k: v.to_dict() for k, v in (buckets or {}).items()},
        "curve": curve.to_dict() if curve is not None else None,
        "units": {"r2_bp": "basis points (1e-4)", "T_minutes": "minutes"},
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"

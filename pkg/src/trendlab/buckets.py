"""Average next-interval return by trend-strength bucket."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .trend import Panel

BUCKETS_PER_UNIT = (3, 5)
CSV_COLUMNS = ["k", "phi_lo", "phi_hi", "count", "mean_phi", "mean_response", "stderr"]


def bucket_index(phi, buckets_per_unit: int = 3, k_max: int = 7) -> np.ndarray:
    """Bucket ``k`` covering ``[k/u - 1/(2u), k/u + 1/(2u))``, clamped to ``[-k_max, k_max]``."""
    u = buckets_per_unit
    k = np.floor(np.asarray(phi, dtype=float) * u + 0.5)
    return np.clip(k, -k_max, k_max).astype(np.int64)


@dataclass
class BucketStats:
    """Per-bucket counts and moments; arrays are indexed by ``k + k_max``.

    ``stderr`` is the naive i.i.d. error ``std / sqrt(count)`` with the
    sample standard deviation, NaN for buckets with fewer than two entries.
    """

    buckets_per_unit: int
    k_max: int
    count: np.ndarray
    mean_phi: np.ndarray
    mean_response: np.ndarray
    stderr: np.ndarray

    @property
    def k(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        u = self.buckets_per_unit
        lo = (self.k - 0.5) / u
        hi = (self.k + 0.5) / u
        lo[0], hi[-1] = -np.inf, np.inf
        return lo, hi

    @property
    def n_total(self) -> int:
        return int(self.count.sum())

    def to_frame(self) -> pd.DataFrame:
        lo, hi = self.bounds
        return pd.DataFrame({"k": self.k, "phi_lo": lo, "phi_hi": hi, "count": self.count,
                             "mean_phi": self.mean_phi, "mean_response": self.mean_response,
                             "stderr": self.stderr})[CSV_COLUMNS]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        fin = lambda v: None if not np.isfinite(v) else float(v)
        lo, hi = self.bounds
        rows = [{"k": int(k), "phi_lo": fin(a), "phi_hi": fin(b), "count": int(n), "mean_phi": fin(m),
                 "mean_response": fin(r), "stderr": fin(s)}
                for k, a, b, n, m, r, s in zip(self.k, lo, hi, self.count, self.mean_phi,
                                               self.mean_response, self.stderr)]
        return {"buckets_per_unit": self.buckets_per_unit, "k_max": self.k_max,
                "stderr": "iid std/sqrt(count)", "buckets": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def bucketize(panel: Panel | tuple, buckets_per_unit: int = 3, k_max: int = 7) -> BucketStats:
    """Bucket statistics over every defined (row, horizon) pair of ``panel``.

    ``panel`` may also be a ``(phi, response)`` pair of arrays.
    """
    if buckets_per_unit not in BUCKETS_PER_UNIT:
        raise ConfigError(f"buckets_per_unit must be one of {BUCKETS_PER_UNIT}")
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    if isinstance(panel, Panel):
        phi, y = panel.pairs()[:2]
    else:
        phi, y = (np.asarray(a, dtype=float).ravel() for a in panel)
        ok = np.isfinite(phi)
        phi, y = phi[ok], y[ok]
    if len(phi) == 0:
        raise DataError("empty panel")
    idx = bucket_index(phi, buckets_per_unit, k_max) + k_max
    nb = 2 * k_max + 1
    count = np.bincount(idx, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_phi = np.bincount(idx, phi, nb) / count
        mean_y = np.bincount(idx, y, nb) / count
        ss = np.bincount(idx, (y - mean_y[idx]) ** 2, nb)
        stderr = np.where(count > 1, np.sqrt(ss / np.maximum(count - 1, 1) / count), np.nan)
    return BucketStats(buckets_per_unit, k_max, count, mean_phi, mean_y, stderr)


def bucket_curve(stats: BucketStats) -> pd.DataFrame:
    """Rows ``k, count, mean_phi, mean_response, stderr`` for nonempty buckets, ordered by ``k``."""
    if stats.n_total == 0:
        raise DataError("no populated buckets")
    df = stats.to_frame()
    return df.loc[df["count"] > 0, ["k", "count", "mean_phi", "mean_response", "stderr"]].reset_index(drop=True)

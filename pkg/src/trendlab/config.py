"""Run configuration: defaults, presets, INI files and command-line overrides.

A configuration file is plain INI::

    [data]
    input = prices.csv
    frequency = daily
    vol_mode = full_sample

    [trend]
    horizons = 1..10
    mode = continuous

    [model]
    model = cubic
    bootstrap = 5000
    folds = 15
    seed = 7

    [simulate]
    b = 0.0129
    c = -0.0062

    [subgroups]
    equities = ES, NQ, FTSE
    us_hours = 14:00-23:00

Keys are case-insensitive and may appear in any section; the section names
only group them for readers. ``[subgroups]`` is the exception: each entry
defines a named subgroup from a comma-separated asset list or a clock window.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .ingest import FREQUENCIES, VOL_MODES
from .regress import MODELS, Subgroup
from .trend import MODES

SECTION_OF = {
    "input": "data", "panel": "data", "frequency": "data", "sessions": "data", "vol_mode": "data",
    "ewma_half_life": "data", "clip_sigma": "data",
    "horizons": "trend", "mode": "trend", "lag": "trend", "clip_phi": "trend", "warmup_multiplier": "trend",
    "model": "model", "features": "model", "bootstrap": "model", "folds": "model", "seed": "model",
    "subgroup": "model", "weighting": "model", "buckets_per_unit": "model", "k_max": "model",
    "a": "simulate", "b": "simulate", "c": "simulate", "d": "simulate", "e": "simulate",
    "c2": "simulate", "c4": "simulate", "n_assets": "simulate", "n_intervals": "simulate",
    "noise_sigma": "simulate", "tick_size": "simulate", "initial_price": "simulate",
    "return_vol": "simulate", "noise": "simulate",
    "out": "run", "preset": "run", "dataset": "run",
}


@dataclass
class RunConfig:
    input: str | None = None
    panel: str | None = None
    frequency: str = "daily"
    sessions: str | None = None
    vol_mode: str = "full_sample"
    ewma_half_life: float | None = None
    clip_sigma: float = 20.0
    horizons: str | None = None
    mode: str = "continuous"
    lag: int = 0
    clip_phi: float = 2.5
    warmup_multiplier: float = 5.0
    model: str = "cubic"
    features: str | None = None
    bootstrap: int = 5000
    folds: int = 15
    seed: int = 0
    subgroup: str | None = None
    weighting: str = "rows"
    buckets_per_unit: int = 3
    k_max: int = 7
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 0.0
    c2: float = 0.0
    c4: float = 0.0
    n_assets: int = 4
    n_intervals: int = 2000
    noise_sigma: float = 1.0
    tick_size: float = 0.0
    initial_price: float = 100.0
    return_vol: float = 0.01
    noise: str = "gaussian"
    out: str = "out"
    preset: str | None = None
    dataset: str | None = None
    subgroups: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.frequency not in FREQUENCIES:
            raise ConfigError(f"unknown frequency {self.frequency!r}")
        if self.vol_mode not in VOL_MODES:
            raise ConfigError(f"unknown vol_mode {self.vol_mode!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.lag < 0:
            raise ConfigError("lag must be >= 0")
        if self.horizons is not None:
            parse_horizon_range(self.horizons)
        if self.subgroup is not None and self.subgroup not in self.subgroups:
            raise ConfigError(f"subgroup {self.subgroup!r} is not defined in [subgroups]")
        return self

    @property
    def ks(self) -> list[int] | None:
        return None if self.horizons is None else parse_horizon_range(self.horizons)

    @property
    def feature_list(self) -> tuple:
        if self.features:
            return tuple(f.strip() for f in self.features.split(",") if f.strip())
        return MODELS[self.model]

    def subgroup_filter(self) -> Subgroup | None:
        if self.subgroup is None:
            return None
        return parse_subgroup(self.subgroup, self.subgroups[self.subgroup])

    def to_ini(self) -> str:
        """Resolved configuration; feeding it back through ``--config`` reproduces the run."""
        cp = configparser.ConfigParser(interpolation=None)
        for sec in ("data", "trend", "model", "simulate", "run"):
            cp.add_section(sec)
        for f in fields(self):
            if f.name == "subgroups":
                continue
            v = getattr(self, f.name)
            if v is not None:
                cp.set(SECTION_OF[f.name], f.name, str(v))
        if self.subgroups:
            cp.add_section("subgroups")
            for k, v in sorted(self.subgroups.items()):
                cp.set("subgroups", k, v)
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp.items(sec)]
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return asdict(self)


def parse_horizon_range(text: str) -> list[int]:
    """``"3"`` or ``"1..10"`` to a list of grid exponents."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+))?\s*", str(text))
    if not m:
        raise ConfigError(f"horizons must look like k1..k2, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) else lo
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad horizon range {text!r}")
    return list(range(lo, hi + 1))


def _clock(text: str) -> int:
    h, m = text.split(":")
    return int(h) * 60 + int(m)


def parse_subgroup(name: str, text: str) -> Subgroup:
    text = text.strip()
    m = re.fullmatch(r"(\d{1,2}:\d{2})\s*-\s*(\d{1,2}:\d{2})", text)
    if m:
        return Subgroup(name, window=(_clock(m.group(1)), _clock(m.group(2))))
    assets = frozenset(a.strip() for a in text.split(",") if a.strip())
    if not assets:
        raise ConfigError(f"subgroup {name!r} is empty")
    return Subgroup(name, assets=assets)


PRESETS = {
    "table3": dict(frequency="daily", horizons="1..10", model="cubic", bootstrap=5000, folds=15,
                   a=0.0133, b=0.0129, c=-0.0062, n_assets=24, n_intervals=7800),
    "table5": dict(frequency="minute", horizons="1..4", model="quintic", bootstrap=5000, folds=12,
                   a=0.00017, b=-0.00912, c=0.00259, d=-0.00038, e=-0.00282, n_assets=16, n_intervals=1_000_000),
    "table6": dict(frequency="minute", horizons="6..10", model="cubic", features="const,phi,phi3,sign_phi",
                   bootstrap=5000, folds=12, a=0.00003, b=0.00132, c=-0.00039, e=-0.00071,
                   n_assets=16, n_intervals=1_000_000),
    "table8-short": dict(frequency="monthly", horizons="1..3", model="cubic", bootstrap=500, folds=12,
                         vol_mode="ewma", ewma_half_life=360.0, a=0.061, b=0.070, c=-0.014,
                         n_assets=18, n_intervals=1800),
    "table8-long": dict(frequency="monthly", horizons="4..7", model="cubic", bootstrap=500, folds=12,
                        vol_mode="ewma", ewma_half_life=360.0, a=0.022, b=-0.042, c=0.011,
                        n_assets=24, n_intervals=1800),
    "table9": dict(frequency="yearly", horizons="1..7", model="linear", bootstrap=500, folds=12,
                   a=0.010, b=-0.11, n_assets=4, n_intervals=700),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    t = str(_TYPES[key])
    v = value.strip()
    if v == "" or v.lower() == "none":
        return None
    try:
        if t.startswith("int"):
            return int(v)
        if t.startswith("float"):
            return float(v)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return v


def read_config_file(path) -> tuple[dict, dict]:
    """Key/value settings and subgroup definitions from an INI file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values, subgroups = {}, {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            if sec == "subgroups":
                subgroups[k] = v
            elif k not in _TYPES or k == "subgroups":
                raise ConfigError(f"{path}: unknown key {k!r} in [{sec}]")
            else:
                values[k] = _coerce(k, v)
    return values, subgroups


def resolve(overrides: dict | None = None, config_path=None, preset: str | None = None) -> RunConfig:
    """Defaults, then the preset, then the config file, then explicit overrides."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    file_values, subgroups = read_config_file(config_path) if config_path else ({}, {})
    preset = overrides.get("preset") or file_values.get("preset") or preset
    merged = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
        merged["preset"] = preset
    merged.update(file_values)
    merged.update({k: _coerce(k, v) for k, v in overrides.items()})
    return RunConfig(**merged, subgroups=subgroups).validate()

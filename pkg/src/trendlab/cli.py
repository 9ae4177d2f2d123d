"""Command-line entry point: ``trendlab <stage> [flags]``.

Every stage writes its artifacts and the resolved configuration
(``config.ini``) to ``--out``; rerunning with ``--config out/config.ini``
reproduces the run. Exit codes: 0 success, 1 stage failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .buckets import bucketize
from .config import PRESETS, RunConfig, resolve
from .errors import TrendlabError
from .ingest import compute_returns, load_price_csv, load_sessions, write_price_csv
from .regress import (BootstrapConfig, ModelSpec, aggregate_scales, cross_validate, drop_feature_above, fit,
                      fit_by_horizon, ols_fit)
from .report import DATASET_FOR, assemble_curve, run_bundle
from .simulate import SimConfig, simulate_market
from .trend import MAX_DAY_BY_DAY_HORIZON, Panel, TrendConfig, horizon_grid, panel_from_returns

log = logging.getLogger("trendlab")

STAGES = ("ingest", "trend", "buckets", "regress", "scan", "simulate", "report")
# recovery verdict: |estimate - truth| within this many stderrs, and |t| at least T_MIN for nonzero truths
RECOVERY_SE = 2.0
RECOVERY_T_MIN = 2.0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file; flags override its values")
    p.add_argument("--input", help="price CSV (timestamp,asset,price); for report a comma list of scan.json files")
    p.add_argument("--panel", help="panel CSV written by the trend stage, used instead of --input")
    p.add_argument("--frequency", choices=["minute", "daily", "monthly", "yearly"])
    p.add_argument("--horizons", metavar="k1..k2", help="grid exponents, e.g. 1..10")
    p.add_argument("--mode", choices=["day-by-day", "continuous"])
    p.add_argument("--lag", type=int, metavar="N")
    p.add_argument("--model", choices=["linear", "cubic", "quintic", "general"])
    p.add_argument("--features", metavar="LIST", help="comma-separated features, overrides --model")
    p.add_argument("--bootstrap", type=int, metavar="N", help="bootstrap samples (0 disables)")
    p.add_argument("--folds", type=int, metavar="N", help="cross-validation folds (0 disables)")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--subgroup", metavar="NAME", help="subgroup defined in the config's [subgroups]")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--json", action="store_true", help="print the main result as JSON on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trendlab", description="Trend persistence and reversion analysis.")
    parser.add_argument("--version", action="version", version=f"trendlab {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    helps = {
        "ingest": "validate prices and write normalized returns",
        "trend": "build the trend-strength panel",
        "buckets": "average next return by trend-strength bucket",
        "regress": "pooled polynomial regression with bootstrap errors and CV R^2",
        "scan": "per-horizon fits, rescaled and assembled into a coefficient curve",
        "simulate": "generate a synthetic market (optionally run a recovery check)",
        "report": "merge scan outputs from several datasets into one curve",
    }
    for name in STAGES:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        _add_common(p)
        if name == "simulate":
            p.add_argument("--recover", action="store_true",
                           help="run the full pipeline on the simulated market and report a verdict")
    return parser


def _overrides(args) -> dict:
    keys = ("input", "panel", "frequency", "horizons", "lag", "model", "features", "bootstrap", "folds",
            "seed", "subgroup", "preset", "out")
    out = {k: getattr(args, k) for k in keys}
    if args.mode is not None:
        out["mode"] = args.mode.replace("-", "_")
    return out


# --- shared steps --------------------------------------------------------------

def _trend_config(cfg: RunConfig) -> TrendConfig:
    return TrendConfig(horizon_grid(cfg.frequency, cfg.ks), clip_phi=cfg.clip_phi,
                       warmup_multiplier=cfg.warmup_multiplier, lag=cfg.lag)


def _returns(cfg: RunConfig, prices):
    return [compute_returns(s, cfg.vol_mode, cfg.ewma_half_life, cfg.clip_sigma) for s in prices]


def _panel_from_prices(cfg: RunConfig, prices) -> Panel:
    sessions = None
    if cfg.mode == "day_by_day":
        if cfg.frequency != "minute":
            raise TrendlabError("day-by-day mode needs minute data")
        if not cfg.sessions:
            raise TrendlabError("day-by-day mode needs a session calendar (sessions = FILE in [data])")
        sessions = load_sessions(cfg.sessions)
    return panel_from_returns(_returns(cfg, prices), _trend_config(cfg), cfg.mode, prices, sessions)


def _load_panel(cfg: RunConfig) -> Panel:
    if cfg.panel:
        return Panel.from_csv(cfg.panel)
    if not cfg.input:
        raise TrendlabError("need --input prices or --panel")
    return _panel_from_prices(cfg, load_price_csv(cfg.input, cfg.frequency))


def _spec(cfg: RunConfig, **kw) -> ModelSpec:
    return ModelSpec(cfg.feature_list, subgroup=cfg.subgroup_filter(), weighting=cfg.weighting,
                     grouping="subgroup" if cfg.subgroup else kw.pop("grouping", "pooled"), **kw)


def _bootstrap_cfg(cfg: RunConfig) -> BootstrapConfig | None:
    return BootstrapConfig(cfg.bootstrap, cfg.seed) if cfg.bootstrap else None


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


# --- stages --------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig, out: Path, args) -> dict:
    if not cfg.input:
        raise TrendlabError("ingest needs --input")
    prices = load_price_csv(cfg.input, cfg.frequency)
    rets = _returns(cfg, prices)
    lines = ["timestamp,asset,R,excess"]
    for r in rets:
        lines += [f"{int(t)},{r.asset_id},{v!r},{x!r}" for t, v, x in
                  zip(r.timestamps, r.values.tolist(), r.excess.tolist())]
    _write(out / "returns.csv", "\n".join(lines) + "\n")
    # EWMA volatility is a path; report its last value
    return {"assets": {r.asset_id: {"n_prices": len(s), "n_returns": len(r), "mu": r.mu,
                                    "sigma": float(np.atleast_1d(r.sigma)[-1]) if len(r) else None,
                                    "n_clipped": r.n_clipped, "vol_mode": r.vol_mode}
                       for s, r in zip(prices, rets)}}


def cmd_trend(cfg: RunConfig, out: Path, args) -> dict:
    if not cfg.input:
        raise TrendlabError("trend needs --input")
    panel = _load_panel(cfg)
    panel.to_csv(out / "panel.csv")
    return panel.metadata()


def cmd_buckets(cfg: RunConfig, out: Path, args) -> dict:
    panel = _load_panel(cfg)
    spec = _spec(cfg)
    if spec.subgroup is not None:
        panel = panel.select(spec.subgroup.mask(panel))
    stats = bucketize(panel, cfg.buckets_per_unit, cfg.k_max)
    if args.json:
        _write(out / "buckets.json", stats.to_json())
    else:
        stats.to_csv(out / "buckets.csv")
    return stats.to_dict()


def cmd_regress(cfg: RunConfig, out: Path, args) -> dict:
    panel = _load_panel(cfg)
    spec = _spec(cfg)
    res = fit(panel, spec, _bootstrap_cfg(cfg), cfg.folds or None)
    _write(out / "fit.json", res.to_json())
    if res.samples is not None:
        _write(out / "bootstrap_samples.csv", res.samples_csv())
    doc = {"pooled": res.to_dict()}
    if panel.K >= 2:
        agg = aggregate_scales(panel)
        ares = ols_fit(agg, spec)
        if cfg.folds:
            ares.r2_adj_bp = cross_validate(agg, spec, cfg.folds)
        _write(out / "fit_aggregated.json", ares.to_json())
        doc["aggregated"] = {"r2_bp": ares.r2_bp, "r2_adj_bp": ares.r2_adj_bp, "n_rows": ares.n_rows}
    return doc


def cmd_scan(cfg: RunConfig, out: Path, args) -> dict:
    panel = _load_panel(cfg)
    spec = _spec(cfg, grouping="per_horizon")
    template = None
    if "phi5" in spec.features and panel.frequency == "minute":
        template = drop_feature_above("phi5", MAX_DAY_BY_DAY_HORIZON)
    fits = fit_by_horizon(panel, spec, _bootstrap_cfg(cfg), cfg.folds or None, template)
    if not fits:
        raise TrendlabError("no horizon could be fitted")
    dataset = cfg.dataset or DATASET_FOR[panel.frequency]
    curve = assemble_curve([(dataset, panel.frequency, fits)])
    curve.to_csv(out / "curve.csv")
    curve.to_gnuplot(out / "curve.gp")
    doc = {"dataset": dataset, "frequency": panel.frequency,
           "fits": [{"T": T, "fit": r.to_dict()} for T, r in fits], "curve": curve.to_dict()}
    _write(out / "scan.json", _dump(doc))
    return doc


def _sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(a=cfg.a, b=cfg.b, c=cfg.c, d=cfg.d, e=cfg.e, c2=cfg.c2, c4=cfg.c4,
                     T=horizon_grid(cfg.frequency, cfg.ks), n_assets=cfg.n_assets, n_intervals=cfg.n_intervals,
                     noise_sigma=cfg.noise_sigma, tick_size=cfg.tick_size, initial_price=cfg.initial_price,
                     seed=cfg.seed, return_vol=cfg.return_vol, frequency=cfg.frequency, noise=cfg.noise,
                     clip_phi=cfg.clip_phi)


def recovery_verdict(res, truth: dict) -> dict:
    """Per-coefficient check of a fit against known truth."""
    checks = {}
    for name, c in res.coefficients.items():
        if name == "a":
            continue
        true = truth.get(name, 0.0)
        z = abs(c.value - true) / c.stderr
        ok = z <= RECOVERY_SE
        if true != 0.0:
            ok = ok and abs(c.t) >= RECOVERY_T_MIN and np.sign(c.value) == np.sign(true)
        checks[name] = {"truth": true, "value": c.value, "stderr": c.stderr, "t": c.t,
                        "ci95": [c.value - 1.96 * c.stderr, c.value + 1.96 * c.stderr],
                        "z_vs_truth": z, "pass": bool(ok)}
    return {"pass": all(v["pass"] for v in checks.values()), "coefficients": checks,
            "tolerance": {"stderr_multiple": RECOVERY_SE, "min_abs_t": RECOVERY_T_MIN}}


def cmd_simulate(cfg: RunConfig, out: Path, args) -> dict:
    sim = _sim_config(cfg)
    prices = simulate_market(sim)
    write_price_csv(prices, out / "prices.csv")
    doc = {"n_assets": sim.n_assets, "n_intervals": sim.n_intervals, "horizons": list(sim.horizons),
           "noise": sim.noise, "seed": sim.seed}
    if args.recover:
        panel = _panel_from_prices(cfg, prices)
        res = fit(panel, _spec(cfg), _bootstrap_cfg(cfg) or BootstrapConfig(1000, cfg.seed), cfg.folds or None)
        truth = {"a": cfg.a, "b": cfg.b, "c": cfg.c, "d": cfg.d, "e": cfg.e, "c2": cfg.c2, "c4": cfg.c4}
        verdict = recovery_verdict(res, truth)
        verdict["fit"] = res.to_dict()
        _write(out / "verdict.json", _dump(verdict))
        print("recovery " + ("PASS" if verdict["pass"] else "FAIL") + ": " + ", ".join(
            f"{k}={v['value']:.6g}±{v['stderr']:.2g} (truth {v['truth']:.6g})"
            for k, v in verdict["coefficients"].items()))
        doc["verdict"] = verdict
    return doc


def cmd_report(cfg: RunConfig, out: Path, args) -> dict:
    if not cfg.input:
        raise TrendlabError("report needs --input with one or more scan.json files")
    from .regress import Coefficient, FitResult

    parts = []
    for path in (p.strip() for p in cfg.input.split(",") if p.strip()):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        fits = []
        for item in doc["fits"]:
            coefs = {k: Coefficient(v["value"], np.nan if v["stderr"] is None else v["stderr"])
                     for k, v in item["fit"]["coefficients"].items()}
            fits.append((item["T"], FitResult(coefs, item["fit"]["r2_bp"], item["fit"]["n_rows"], ModelSpec())))
        parts.append((doc["dataset"], doc["frequency"], fits))
    curve = assemble_curve(parts)
    curve.to_csv(out / "curve.csv")
    curve.to_gnuplot(out / "curve.gp")
    text = run_bundle(cfg.to_dict(), curve=curve)
    _write(out / "report.json", text)
    return json.loads(text)


COMMANDS = {"ingest": cmd_ingest, "trend": cmd_trend, "buckets": cmd_buckets, "regress": cmd_regress,
            "scan": cmd_scan, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(_overrides(args), args.config)
        if cfg.mode == "day_by_day" and cfg.ks and max(horizon_grid(cfg.frequency, cfg.ks)) > MAX_DAY_BY_DAY_HORIZON:
            raise TrendlabError(f"day-by-day mode supports horizons up to {MAX_DAY_BY_DAY_HORIZON}")
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "config.ini", cfg.to_ini())
        doc = COMMANDS[args.stage](cfg, out, args)
    except (TrendlabError, OSError, ValueError) as exc:
        print(f"trendlab {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        sys.stdout.write(_dump(doc))
    return 0


if __name__ == "__main__":
    sys.exit(main())

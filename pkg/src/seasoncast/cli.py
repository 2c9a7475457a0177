"""``seasoncast`` command line: simulate, fit, doe, analyze, backtest, demo."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, analysis, classical, harness, mixedmodel
from .core import (ConfigError, ForecastRecord, SeriesError, inverse_transform, read_series_csv, sqrt_transform,
                   write_series_csv)
from .datagen import SimConfig, simulate_skill
from .features import CoverageError, build_design, write_design_csv
from .neural import NetworkConfig, TrainingDiverged, fit_design, forecast_day

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

NETWORK_MODELS = ("dense", "simple_rnn", "gru", "lstm")
FIT_MODELS = ("doubly-stoch", "winters", "arima", "seasonal-naive") + NETWORK_MODELS


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- helpers -----------------------------------------------------------------------

def _load_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(EXIT_CONFIG, f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise CliError(EXIT_CONFIG, f"{path}: expected a JSON object")
    return d


def _load_series_dir(path) -> dict:
    p = Path(path)
    files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not files or not all(f.exists() for f in files):
        raise CliError(EXIT_DATA, f"no series CSV files at {path}")
    out = {}
    for f in files:
        for k, v in read_series_csv(f).items():
            if k in out:
                raise CliError(EXIT_DATA, f"skill {k!r} appears in more than one file")
            out[k] = v
    return out


def _write_manifest(out_dir: Path, args, inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": args.command,
        "config": getattr(args, "config", None) or getattr(args, "plan", None),
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "seed": args.seed,
        "version": __version__,
        "wall_seconds": round(time.time() - started, 3),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _emit(args, summary: dict, human: str) -> None:
    print(json.dumps(summary, sort_keys=True) if args.json else human)


def _write_records(records: list[ForecastRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["skill", "target_day", "model", "period", "prediction", "actual"])
        for r in records:
            for p, pred in enumerate(r.predictions, start=1):
                act = "" if r.actuals is None else int(r.actuals[p - 1])
                w.writerow([r.skill, r.target_day, r.model_tag, p, f"{pred:.6f}", act])


# -- simulate ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.time()
    try:
        cfg = SimConfig.from_dict(_load_json(args.config))
    except (ConfigError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_skills < 1:
        raise CliError(EXIT_CONFIG, "--n-skills must be >= 1")
    series = []
    for k in range(args.n_skills):
        c = SimConfig.from_dict({**json.loads(cfg.to_json()), "seed": cfg.seed + k})
        series.append(simulate_skill(c, skill=f"{args.prefix}{k + 1}"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_series_csv(series, out)
    _write_manifest(out.parent, args, [args.config], [out], started)
    rows = sum(s.calls.size for s in series)
    _emit(args, {"out": str(out), "skills": len(series), "rows": rows},
          f"wrote {rows} rows for {len(series)} skill(s) to {out}")
    return EXIT_OK


# -- fit ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    started = time.time()
    all_series = _load_series_dir(args.series)
    skill = args.skill or sorted(all_series)[0]
    if skill not in all_series:
        raise CliError(EXIT_DATA, f"skill {skill!r} not in {args.series}")
    s = all_series[skill]
    target = args.target_day if args.target_day is not None else int(s.days[-1]) + 1
    dpw = s.grid.days_per_week
    first, last = target - args.weeks * dpw, target - 1
    if first < int(s.days[0]) or last > int(s.days[-1]):
        raise CliError(EXIT_DATA, f"window [{first}, {last}] is not covered by days "
                                  f"{int(s.days[0])}..{int(s.days[-1])}")
    win = s.select_days(first, last)
    if win.n_days != last - first + 1:
        raise CliError(EXIT_DATA, f"window [{first}, {last}] has gaps")
    actual = None
    try:
        actual = s.calls_matrix()[s.day_index(target)]
    except KeyError:
        pass
    y = sqrt_transform(win.calls)
    L, ppd = s.grid.season_length, s.grid.periods_per_day
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = args.model
    if m == "doubly-stoch":
        fit = mixedmodel.fit(win)
        hol = bool(s.day_holiday[s.day_index(target)]) if actual is not None else False
        rec = mixedmodel.forecast_next_day(fit, win, target, holiday=hol)
        artifact = fit.to_json()
    elif m == "winters":
        if y.size < 2 * L:
            raise CliError(EXIT_DATA, f"Winters needs two seasons ({2 * L} periods), window has {y.size}")
        fit = classical.winters_fit(y, L)
        rec = ForecastRecord("Winters", skill, target, inverse_transform(classical.winters_forecast(fit, ppd)))
        artifact = fit.to_json()
    elif m == "arima":
        if y.size <= 2 * L:
            raise CliError(EXIT_DATA, f"ARIMA needs more than two seasons ({2 * L} periods)")
        fit = classical.arima_fit(y, L)
        rec = ForecastRecord("ARIMA", skill, target, inverse_transform(classical.arima_forecast(fit, y, ppd)))
        artifact = fit.to_json()
    elif m == "seasonal-naive":
        if y.size < L:
            raise CliError(EXIT_DATA, "seasonal naive needs one season")
        rec = ForecastRecord("SeasonalNaive", skill, target, inverse_transform(classical.seasonal_naive(y, L, ppd)))
        artifact = json.dumps({"model": "SeasonalNaive", "season_length": L})
    else:
        seed = 0 if args.seed is None else args.seed
        cfg = NetworkConfig(model_type=m, nlayers=args.nlayers, nnodes=args.nnodes, kernel_l2=args.l2,
                            mixed_cheat=args.cheat, max_epochs=args.max_epochs, seed=seed)
        cheat = None
        if args.cheat:
            if actual is None and target != int(s.days[-1]) + 1:
                raise CliError(EXIT_DATA, "target day outside the file")
            cheat = harness.cheat_inputs(s, target, args.weeks)
        design = build_design(s, first, last, target, cheat)
        if args.dump_features:
            write_design_csv(design, args.dump_features)
        fit = fit_design(cfg, design, s.grid)
        rec = forecast_day(fit, design.X_target, skill, target)
        artifact = fit.to_json()
        fit.write_history_csv(out / "history.csv")
    if actual is not None:
        rec.actuals = actual
    (out / "fit.json").write_text(artifact + "\n")
    _write_records([rec], out / "forecast.csv")
    outputs = [out / "fit.json", out / "forecast.csv"] + ([out / "history.csv"] if m in NETWORK_MODELS else [])
    _write_manifest(out, args, [args.series], outputs, started)
    summary = {"model": rec.model_tag, "skill": skill, "target_day": target,
               "wape": None if actual is None or actual.sum() == 0 else rec.wape}
    w = summary["wape"]
    _emit(args, summary, f"{rec.model_tag} {skill} day {target}: "
          + ("no actuals" if w is None else f"WAPE {100 * w:.2f}%"))
    return EXIT_OK


# -- doe / analyze -------------------------------------------------------------------

def _doe_plan(d: dict):
    known = {"factors", "splits", "days", "n_days", "max_epochs", "train_weeks"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown plan fields {sorted(extra)}")
    factors = d.get("factors")
    if factors == "full":
        factors = harness.TUNING_FACTORS
    if not factors:
        raise ConfigError("plan has no factors")
    missing = [f for f in harness.FACTOR_NAMES if f not in factors]
    if missing:
        raise ConfigError(f"plan lacks factors {missing}")
    return harness.full_factorial({f: factors[f] for f in harness.FACTOR_NAMES})


def cmd_doe(args) -> int:
    started = time.time()
    plan = _load_json(args.plan)
    try:
        design = _doe_plan(plan)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    series = _load_series_dir(args.series)
    splits = plan.get("splits") or sorted(series)
    if any(sp not in series for sp in splits):
        raise CliError(EXIT_DATA, f"plan splits {splits} not all present in {args.series}")
    if "days" in plan:
        days = {sp: list(plan["days"]) for sp in splits}
    else:
        n = int(plan.get("n_days", 5))
        days = {sp: [int(d) for d in series[sp].days[-n:]] for sp in splits}
    runs = harness.run_experiment(design, {sp: series[sp] for sp in splits}, days, workers=args.workers,
                                  max_epochs=int(plan.get("max_epochs", 500)),
                                  weeks=int(plan.get("train_weeks", 5)), base_seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_runs_csv(runs, out / "runs.csv")
    _write_manifest(out, args, [args.plan, args.series], [out / "runs.csv"], started)
    bad = sum(r.status != "ok" for r in runs)
    if bad:
        print(f"warning: {bad} of {len(runs)} runs not ok", file=sys.stderr)
    _emit(args, {"runs": len(runs), "not_ok": bad, "out": str(out / "runs.csv")},
          f"{len(runs)} runs ({bad} not ok) -> {out / 'runs.csv'}")
    return EXIT_OK


def profile_svg(table: list[dict], path) -> None:
    """Minimal line chart of the upper PI of WAPE across design rows."""
    vals = [r["upper_pi_wape"] for r in table]
    ok = [v for v in vals if v is not None]
    if not ok:
        return
    W, H, pad = 640, 240, 30
    lo, hi = min(ok), max(ok)
    span = hi - lo or 1.0
    n = max(len(vals) - 1, 1)
    pts = " ".join(f"{pad + i * (W - 2 * pad) / n:.1f},{H - pad - (v - lo) / span * (H - 2 * pad):.1f}"
                   for i, v in enumerate(vals) if v is not None)
    Path(path).write_text(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">'
        f'<polyline fill="none" stroke="black" points="{pts}"/>'
        f'<text x="{pad}" y="{pad - 10}" font-size="12">upper 95% PI of WAPE by design row '
        f'({lo:.4f} to {hi:.4f})</text></svg>\n')


def cmd_analyze(args) -> int:
    started = time.time()
    try:
        runs = harness.read_runs_csv(args.runs)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"runs table not found: {args.runs}") from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"{args.runs}: {exc}") from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = analysis.analyze_runs(runs, level=args.level)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.out)
    files = analysis.write_report(res, runs, out)
    if args.svg:
        profile_svg(res.selection.table, out / "profile.svg")
        files.append("profile.svg")
    _write_manifest(out, args, [args.runs], [out / f for f in files], started)
    best = {k: str(v) for k, v in res.selection.best_row.items()}
    _emit(args, {"best_row": best, "upper_pi_wape": res.selection.criterion, "excluded": res.excluded},
          "best configuration: " + ", ".join(f"{k}={v}" for k, v in best.items())
          + f" (upper 95% PI of WAPE {100 * res.selection.criterion:.2f}%)")
    return EXIT_OK


# -- backtest --------------------------------------------------------------------------

def _paired_reports(result: harness.BacktestResult) -> list[dict]:
    table = result.wape_table()
    pairs = [(base, tag) for tag, base in (("GRU_cheat", "RNN_GRU"), ("LSTM_cheat", "RNN_LSTM"),
                                           ("Simple_cheat", "RNN_Simple"), ("NN_Classic_cheat", "NN_Classic"))
             if tag in result.models and base in result.models]
    pairs += [(m, "RNN_GRU") for m in ("RNN_LSTM", "NN_Classic", "RNN_Simple", "DoublyStoch")
              if m in result.models and "RNN_GRU" in result.models]
    out = []
    for a, b in pairs:
        try:
            out.append(analysis.paired_comparison_report(table, a, b))
        except CoverageError:
            pass
    return out


def cmd_backtest(args) -> int:
    started = time.time()
    d = _load_json(args.plan)
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        plan = harness.BacktestPlan.from_dict(d)
    except (ConfigError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid plan: {exc}") from exc
    series = _load_series_dir(args.series)
    result = harness.run_backtest(plan, series, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_records_csv(result, out / "records.csv")
    harness.write_summary_csv(result, out / "summary.csv")
    harness.write_win_rates_csv(result, out / "win_rates.csv")
    paired = _paired_reports(result)
    with open(out / "paired.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "n", "median_diff", "statistic", "p_value", "win_rate_b"])
        for r in paired:
            w.writerow([r["a"], r["b"], r["n"], f"{r['median_diff']:.6g}", f"{r['statistic']:.6g}",
                        f"{r['p_value']:.6g}", f"{r['win_rate_b']:.6g}"])
    files = ["records.csv", "summary.csv", "win_rates.csv", "paired.csv"]
    _write_manifest(out, args, [args.plan, args.series], [out / f for f in files], started)
    failed = sum("failed" in r.flags for r in result.records)
    lines = ["split  sum_call_vol  " + "  ".join(plan.models)]
    for row in result.summary:
        lines.append(f"{row['split']}  {row['sum_call_vol']}  " + "  ".join(
            "-" if row[m] is None else f"{100 * row[m]:.2f}%" for m in plan.models))
    _emit(args, {"summary": result.summary, "paired": paired, "failed_cells": failed}, "\n".join(lines))
    return EXIT_OK


# -- demo ------------------------------------------------------------------------------

DEMO_FACTORS = {
    "model.type": ["dense", "gru"],
    "nlayers": [1, 2],
    "mixed.cheat": [False, True],
    "nnodes": [25],
    "kernel.L2.reg": [0.0001],
}


def cmd_demo(args) -> int:
    """Simulate 3 skills, run a 2x2x2 design over 5 days, analyze it, then backtest."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "sim_config.json"
    cfg_path.write_text(SimConfig(n_weeks=7, seed=seed, volume_scale=3.0).to_json() + "\n")
    base = ["--seed", str(seed), "--workers", str(args.workers)] + (["--json"] if args.json else [])
    steps = [
        ["simulate", "--config", str(cfg_path), "--out", str(data / "series.csv"), "--n-skills", "3"],
    ]
    plan = {"factors": DEMO_FACTORS, "n_days": 5, "max_epochs": args.max_epochs}
    (out / "doe_plan.json").write_text(json.dumps(plan, indent=2) + "\n")
    bt = {"skills": ["S1", "S2", "S3"], "n_forecast_days": 5, "max_epochs": args.max_epochs,
          "models": ["DoublyStoch", "Winters", "ARIMA", "SeasonalNaive", "RNN_GRU", "GRU_cheat"],
          "networks": {"RNN_GRU": {"nlayers": 1, "nnodes": 25}, "GRU_cheat": {"nlayers": 1, "nnodes": 25}}}
    (out / "backtest_plan.json").write_text(json.dumps(bt, indent=2) + "\n")
    steps += [
        ["doe", "--plan", str(out / "doe_plan.json"), "--series", str(data), "--out", str(out / "doe")],
        ["analyze", "--runs", str(out / "doe" / "runs.csv"), "--out", str(out / "analysis"), "--svg"],
        ["backtest", "--plan", str(out / "backtest_plan.json"), "--series", str(data),
         "--out", str(out / "backtest")],
    ]
    started = time.time()
    for step in steps:
        code = main(step + base)
        if code:
            return code
    _write_manifest(out, args, [], [cfg_path, out / "doe_plan.json", out / "backtest_plan.json"], started)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default: from config or 0)")
    common.add_argument("--workers", type=int, default=harness.default_workers(),
                        help="worker processes (default: $SEASONCAST_WORKERS or 1)")
    common.add_argument("--json", action="store_true", help="machine-readable summary on stdout")

    p = argparse.ArgumentParser(prog="seasoncast", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate synthetic skill series")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-skills", type=int, default=1)
    s.add_argument("--prefix", default="S")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", parents=[common], help="fit one model on a window and forecast the next day")
    f.add_argument("model", choices=FIT_MODELS)
    f.add_argument("series")
    f.add_argument("--skill")
    f.add_argument("--target-day", type=int)
    f.add_argument("--weeks", type=int, default=5)
    f.add_argument("--out", required=True)
    f.add_argument("--nlayers", type=int, default=1)
    f.add_argument("--nnodes", type=int, default=50)
    f.add_argument("--l2", type=float, default=0.0)
    f.add_argument("--cheat", action="store_true")
    f.add_argument("--max-epochs", type=int, default=500)
    f.add_argument("--dump-features", metavar="CSV", help="write the encoded network inputs (network models)")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("doe", parents=[common], help="run the factorial tuning experiment")
    d.add_argument("--plan", required=True)
    d.add_argument("--series", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_doe)

    a = sub.add_parser("analyze", parents=[common], help="loglinear-variance analysis of a runs table")
    a.add_argument("--runs", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--level", type=float, default=0.95)
    a.add_argument("--svg", action="store_true")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("backtest", parents=[common], help="rolling day-ahead backtest")
    b.add_argument("--plan", required=True)
    b.add_argument("--series", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_backtest)

    m = sub.add_parser("demo", parents=[common], help="end-to-end pipeline at desk scale")
    m.add_argument("--out", required=True)
    m.add_argument("--max-epochs", type=int, default=60)
    m.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CoverageError, SeriesError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, TrainingDiverged, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

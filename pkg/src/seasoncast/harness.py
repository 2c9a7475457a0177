"""Factorial tuning experiment and rolling day-ahead backtest."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import classical, mixedmodel
from .core import ConfigError, ForecastRecord, SkillSeries, UndefinedWapeError, inverse_transform, sqrt_transform
from .features import CheatInputs, CoverageError, build_design
from .neural import NetworkConfig, TrainingDiverged, fit_design, forecast_day


FACTOR_NAMES = ("model.type", "nlayers", "mixed.cheat", "nnodes", "kernel.L2.reg")
TUNING_FACTORS = {
    "model.type": ["dense", "simple_rnn", "gru", "lstm"],
    "nlayers": [1, 2],
    "mixed.cheat": [False, True],
    "nnodes": [25, 50, 75, 100],
    "kernel.L2.reg": [0.0, 0.0001],
}
RUN_COLUMNS = FACTOR_NAMES + ("split", "file", "wape", "status")
CLASSICAL_TAGS = ("DoublyStoch", "Winters", "ARIMA", "SeasonalNaive")


# -- design -------------------------------------------------------------------

@dataclass
class FactorialDesign:
    factors: dict
    rows: list[dict]

    def __len__(self) -> int:
        return len(self.rows)


def full_factorial(factors: dict) -> FactorialDesign:
    """All level combinations; the last factor varies fastest."""
    if not factors:
        raise ConfigError("design has no factors")
    for name, levels in factors.items():
        if len(levels) == 0:
            raise ConfigError(f"factor {name!r} has no levels")
        if len(set(map(repr, levels))) != len(levels):
            raise ConfigError(f"factor {name!r} repeats a level")
    names = list(factors)
    rows = [dict(zip(names, combo)) for combo in itertools.product(*(factors[n] for n in names))]
    return FactorialDesign(dict(factors), rows)


def row_config(row: dict, seed: int, max_epochs: int = 500) -> NetworkConfig:
    return NetworkConfig(model_type=row["model.type"], nlayers=int(row["nlayers"]),
                         nnodes=int(row["nnodes"]), kernel_l2=float(row["kernel.L2.reg"]),
                         mixed_cheat=bool(row["mixed.cheat"]), max_epochs=max_epochs, seed=seed)


def run_seed(row: dict, split: str, file: int, base_seed: int = 0) -> int:
    """Stable 31-bit seed from the run key (independent of scheduling and PYTHONHASHSEED)."""
    key = json.dumps([base_seed, [[k, _fmt(row[k])] for k in FACTOR_NAMES if k in row], split, int(file)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "big") >> 1


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- classical fits shared by cheat inputs and the backtest ---------------------

def training_window(series: SkillSeries, target_day: int, weeks: int = 5) -> tuple[int, int]:
    """First and last day of the ``weeks``-week window ending the day before ``target_day``."""
    dpw = series.grid.days_per_week
    first, last = target_day - weeks * dpw, target_day - 1
    days = set(series.days.tolist())
    missing = [d for d in range(first, last + 1) if d not in days]
    if missing:
        raise CoverageError(f"window [{first}, {last}] lacks days {missing[:5]}")
    return first, last


@dataclass
class ClassicalFits:
    """Transformed-scale in-sample fits and day-ahead forecasts on one window."""

    fitted: dict  # tag -> (window_days, ppd), nan where undefined
    forecast: dict  # tag -> (ppd,)
    flags: list[str] = field(default_factory=list)


def seasonal_naive_fitted(y_window: np.ndarray, L: int) -> np.ndarray:
    out = np.full(y_window.size, np.nan)
    out[L:] = y_window[:-L]
    return out


def fit_classical(series: SkillSeries, target_day: int, weeks: int = 5) -> ClassicalFits:
    """Fit the mixed, Winters and ARIMA models on the window before ``target_day``.

    Only days strictly before the target are read. A model that fails falls
    back to the seasonal-naive forecast and is flagged.
    """
    g = series.grid
    ppd, L = g.periods_per_day, g.season_length
    first, last = training_window(series, target_day, weeks)
    win = series.select_days(first, last)
    y = sqrt_transform(win.calls).astype(float)
    naive_fit = seasonal_naive_fitted(y, L)
    naive_fc = classical.seasonal_naive(y, L, ppd)
    fitted, forecast, flags = {}, {}, []
    fitted["SeasonalNaive"], forecast["SeasonalNaive"] = naive_fit, naive_fc

    try:
        mm = mixedmodel.fit(win)
        hol = _target_holiday(series, target_day)
        latent, mflags = mixedmodel.forecast_latent(mm, g, target_day, holiday=hol)
        fitted["DoublyStoch"], forecast["DoublyStoch"] = mixedmodel.fitted_values(mm), latent
        flags += ["DoublyStoch:" + f for f in mflags]
        if not mm.converged:
            flags.append("DoublyStoch:not-converged")
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        flags.append(f"DoublyStoch:fallback:{type(exc).__name__}")
        fitted["DoublyStoch"], forecast["DoublyStoch"] = naive_fit, naive_fc

    try:
        ws = classical.winters_fit(y, L)
        fitted["Winters"], forecast["Winters"] = ws.fitted, classical.winters_forecast(ws, ppd)
    except (ArithmeticError, ValueError) as exc:
        flags.append(f"Winters:fallback:{type(exc).__name__}")
        fitted["Winters"], forecast["Winters"] = naive_fit, naive_fc

    try:
        af = classical.arima_fit(y, L)
        fitted["ARIMA"], forecast["ARIMA"] = classical.arima_fitted(af, y), classical.arima_forecast(af, y, ppd)
        if af.at_bounds:
            flags.append("ARIMA:at-bounds")
    except (ArithmeticError, ValueError) as exc:
        flags.append(f"ARIMA:fallback:{type(exc).__name__}")
        fitted["ARIMA"], forecast["ARIMA"] = naive_fit, naive_fc

    for tag in list(fitted):
        if not (np.all(np.isfinite(forecast[tag])) and np.all(np.isfinite(fitted[tag][L:]))):
            flags.append(f"{tag}:fallback:non-finite")
            fitted[tag], forecast[tag] = naive_fit, naive_fc
    fitted = {k: np.asarray(v, dtype=float).reshape(-1, ppd) for k, v in fitted.items()}
    return ClassicalFits(fitted, {k: np.asarray(v, dtype=float) for k, v in forecast.items()}, flags)


def _target_holiday(series: SkillSeries, day: int) -> bool:
    # calendar metadata, known in advance
    try:
        return bool(series.day_holiday[series.day_index(day)])
    except KeyError:
        return False


def cheat_inputs(series: SkillSeries, target_day: int, weeks: int = 5,
                 fits: ClassicalFits | None = None) -> CheatInputs:
    """Mixed/Winters/ARIMA columns for the encoded rows and the target day.

    Training rows (window days after the first week) get in-sample fitted
    values; the target day gets genuine day-ahead forecasts. Values stay on
    the transformed scale; ``build_design`` standardizes them.
    """
    fits = fits or fit_classical(series, target_day, weeks)
    dpw = series.grid.days_per_week
    tags = ("DoublyStoch", "Winters", "ARIMA")
    train = np.column_stack([fits.fitted[t][dpw:].ravel() for t in tags])
    target = np.column_stack([fits.forecast[t] for t in tags])
    return CheatInputs(train, target, list(fits.flags))


# -- factorial experiment --------------------------------------------------------

@dataclass
class ExperimentRun:
    row: dict
    split: str
    file: int
    wape: float | None
    status: str

    def __post_init__(self):
        if self.status not in ("ok", "diverged", "skipped"):
            raise ValueError(f"bad status {self.status!r}")
        if (self.wape is not None) != (self.status == "ok"):
            raise ValueError("wape must be present iff status is ok")

    def key(self):
        return tuple(_fmt(self.row[k]) for k in FACTOR_NAMES) + (self.split, int(self.file))

    def csv_row(self) -> list[str]:
        return [_fmt(self.row[k]) for k in FACTOR_NAMES] + [
            self.split, str(int(self.file)), "" if self.wape is None else repr(float(self.wape)), self.status]


def _network_cell(series: SkillSeries, target_day: int, config: NetworkConfig, weeks: int,
                  cheat: CheatInputs | None) -> ForecastRecord:
    first, last = training_window(series, target_day, weeks)
    design = build_design(series, first, last, target_day, cheat)
    fit = fit_design(config, design, series.grid)
    actual = series.calls_matrix()[series.day_index(target_day)]
    rec = forecast_day(fit, design.X_target, series.skill, target_day, actual)
    if cheat is not None:
        rec.flags.extend(cheat.flags)
    return rec


def _experiment_task(args):
    row, split, file, series, cheat, seed, max_epochs, weeks = args
    if series is None:
        return ExperimentRun(row, split, file, None, "skipped")
    config = row_config(row, seed, max_epochs)
    try:
        if config.mixed_cheat and cheat is None:
            raise CoverageError("cheat inputs unavailable")
        rec = _network_cell(series, file, config, weeks, cheat if config.mixed_cheat else None)
        return ExperimentRun(row, split, file, rec.wape, "ok")
    except (CoverageError, UndefinedWapeError, KeyError):
        return ExperimentRun(row, split, file, None, "skipped")
    except (TrainingDiverged, FloatingPointError, ValueError, np.linalg.LinAlgError):
        return ExperimentRun(row, split, file, None, "diverged")


def _cheat_task(args):
    series, day, weeks = args
    try:
        return cheat_inputs(series, day, weeks)
    except (CoverageError, ValueError, KeyError):
        return None


def _pool_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SEASONCAST_WORKERS", "1")))
    except ValueError:
        return 1


def _has_day(series: SkillSeries, day: int) -> bool:
    try:
        series.day_index(day)
        return True
    except KeyError:
        return False


def run_experiment(design: FactorialDesign, series_set: dict, days: dict | list, workers: int = 1,
                   max_epochs: int = 500, weeks: int = 5, base_seed: int = 0) -> list[ExperimentRun]:
    """Replicate every design row over each (split, file) cell.

    ``days`` is either one list of target days for every split or a mapping
    split -> days. Cells lacking history are recorded as skipped. The table
    comes back in canonical (row, split, file) order whatever the worker count.
    """
    for row in design.rows:
        try:
            row_config(row, 0, max_epochs)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"design row {row}: {exc}") from exc
    cells = []
    for split in sorted(series_set):
        for d in (days[split] if isinstance(days, dict) else days):
            cells.append((split, int(d)))
    usable = {}
    for split, d in cells:
        s = series_set[split]
        try:
            training_window(s, d, weeks)
            ok = _has_day(s, d)
        except CoverageError:
            ok = False
        usable[(split, d)] = s if ok else None
    need_cheat = any(bool(r.get("mixed.cheat", False)) for r in design.rows)
    cheats = {}
    if need_cheat:
        keys = [c for c in cells if usable[c] is not None]
        out = _pool_map(_cheat_task, [(usable[c], c[1], weeks) for c in keys], workers)
        cheats = dict(zip(keys, out))
    tasks = []
    for row in design.rows:
        for split, d in cells:
            seed = run_seed(row, split, d, base_seed)
            tasks.append((row, split, d, usable[(split, d)], cheats.get((split, d)), seed, max_epochs, weeks))
    return _pool_map(_experiment_task, tasks, workers)


def write_runs_csv(runs: list[ExperimentRun], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in runs:
            w.writerow(r.csv_row())


def _parse_level(name: str, text: str):
    if name == "mixed.cheat":
        if text.upper() not in ("TRUE", "FALSE"):
            raise ValueError(f"mixed.cheat must be TRUE/FALSE, got {text!r}")
        return text.upper() == "TRUE"
    if name in ("nlayers", "nnodes"):
        return int(text)
    if name == "kernel.L2.reg":
        return float(text)
    return text


def read_runs_csv(path) -> list[ExperimentRun]:
    """Parse a runs table; errors name the offending data row (1-based, header excluded)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RUN_COLUMNS:
            raise ValueError(f"row 0: header must be {','.join(RUN_COLUMNS)}")
        runs = []
        for i, rec in enumerate(reader, start=1):
            try:
                if len(rec) != len(RUN_COLUMNS):
                    raise ValueError(f"expected {len(RUN_COLUMNS)} fields, got {len(rec)}")
                row = {n: _parse_level(n, v) for n, v in zip(FACTOR_NAMES, rec)}
                w = float(rec[7]) if rec[7] != "" else None
                runs.append(ExperimentRun(row, rec[5], int(rec[6]), w, rec[8]))
            except ValueError as exc:
                raise ValueError(f"row {i}: {exc}") from exc
    return runs


# -- backtest --------------------------------------------------------------------

DEFAULT_NETWORKS = {
    # best upper-PI row of the tuning study, with and without cheat inputs
    "RNN_GRU": {"model_type": "gru", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4},
    "GRU_cheat": {"model_type": "gru", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4, "mixed_cheat": True},
    "RNN_LSTM": {"model_type": "lstm", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4},
    "LSTM_cheat": {"model_type": "lstm", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4, "mixed_cheat": True},
    "RNN_Simple": {"model_type": "simple_rnn", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4},
    "Simple_cheat": {"model_type": "simple_rnn", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4,
                     "mixed_cheat": True},
    "NN_Classic": {"model_type": "dense", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4},
    "NN_Classic_cheat": {"model_type": "dense", "nlayers": 2, "nnodes": 50, "kernel_l2": 1e-4,
                         "mixed_cheat": True},
}


@dataclass
class BacktestPlan:
    skills: list[str]
    n_forecast_days: int = 60
    train_weeks: int = 5
    models: list[str] = field(default_factory=lambda: ["DoublyStoch", "Winters", "ARIMA", "RNN_GRU"])
    networks: dict = field(default_factory=dict)  # tag -> NetworkConfig kwargs overrides
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.skills:
            raise ConfigError("plan has no skills")
        if self.n_forecast_days < 1 or self.train_weeks < 2:
            raise ConfigError("need n_forecast_days >= 1 and train_weeks >= 2")
        for m in self.models:
            if m not in CLASSICAL_TAGS and m not in DEFAULT_NETWORKS and m not in self.networks:
                raise ConfigError(f"unknown model {m!r}")

    def network_kwargs(self, tag: str) -> dict:
        kw = dict(DEFAULT_NETWORKS.get(tag, {}))
        kw.update(self.networks.get(tag, {}))
        return kw

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestPlan":
        known = {"skills", "n_forecast_days", "train_weeks", "models", "networks", "max_epochs", "seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown plan fields {sorted(extra)}")
        return cls(**d)


def forecast_days(series: SkillSeries, n: int, weeks: int = 5) -> list[int]:
    """The last ``n`` days of the series; each must have a full window before it."""
    days = series.days.tolist()
    chosen = days[-n:]
    if len(chosen) < n or chosen[0] - weeks * series.grid.days_per_week < days[0]:
        raise CoverageError(f"{series.skill}: {len(days)} days cannot host {n} forecasts "
                            f"after a {weeks}-week window")
    return [int(d) for d in chosen]


def _backtest_cell(args):
    series, day, plan = args
    actual = series.calls_matrix()[series.day_index(day)]
    records = []
    try:
        fits = fit_classical(series, day, plan.train_weeks)
    except CoverageError as exc:
        return [_failed(m, series.skill, day, actual, f"skipped:{exc}") for m in plan.models]
    cheat = None
    for tag in plan.models:
        if tag in CLASSICAL_TAGS:
            flags = [f for f in fits.flags if f.startswith(tag + ":")]
            pred = inverse_transform(fits.forecast[tag])
            records.append(ForecastRecord(tag, series.skill, day, pred, actual, flags))
            continue
        kw = plan.network_kwargs(tag)
        seed = run_seed({"model.type": tag}, series.skill, day, plan.seed)
        config = NetworkConfig(**{**kw, "max_epochs": plan.max_epochs, "seed": seed})
        try:
            if config.mixed_cheat and cheat is None:
                cheat = cheat_inputs(series, day, plan.train_weeks, fits)
            rec = _network_cell(series, day, config, plan.train_weeks, cheat if config.mixed_cheat else None)
            rec.model_tag = tag
            records.append(rec)
        except (TrainingDiverged, FloatingPointError) as exc:
            records.append(_failed(tag, series.skill, day, actual, f"diverged:{exc}"))
        except (CoverageError, ValueError) as exc:
            records.append(_failed(tag, series.skill, day, actual, f"skipped:{exc}"))
    return records


def _failed(tag, skill, day, actual, flag) -> ForecastRecord:
    rec = ForecastRecord(tag, skill, day, np.zeros(len(actual)), actual, [flag])
    rec.flags.append("failed")
    return rec


@dataclass
class BacktestResult:
    records: list[ForecastRecord]
    summary: list[dict]
    win_rates: list[dict]
    models: list[str]

    def cell_wape(self, rec: ForecastRecord) -> float | None:
        if "failed" in rec.flags:
            return None
        try:
            return rec.wape
        except UndefinedWapeError:
            return None

    def wape_table(self) -> dict:
        """(skill, day) -> {model: wape} over completed cells."""
        out: dict = {}
        for r in self.records:
            w = self.cell_wape(r)
            if w is not None:
                out.setdefault((r.skill, r.target_day), {})[r.model_tag] = w
        return out


def run_backtest(plan: BacktestPlan, series_set: dict, workers: int = 1) -> BacktestResult:
    """Rolling day-ahead forecasts for each planned skill and model.

    Classical models are fitted once per (skill, day) and shared with any
    cheat-input networks.
    """
    tasks = []
    for skill in plan.skills:
        if skill not in series_set:
            raise CoverageError(f"skill {skill!r} not in the series set")
        s = series_set[skill]
        for d in forecast_days(s, plan.n_forecast_days, plan.train_weeks):
            tasks.append((s, d, plan))
    records = [r for cell in _pool_map(_backtest_cell, tasks, workers) for r in cell]
    result = BacktestResult(records, [], [], list(plan.models))
    result.summary = _summarize(result, plan, series_set)
    result.win_rates = _win_rates(result, plan, series_set)
    return result


def _summarize(result: BacktestResult, plan: BacktestPlan, series_set: dict) -> list[dict]:
    table = result.wape_table()
    rows = []
    for skill in plan.skills:
        s = series_set[skill]
        days = forecast_days(s, plan.n_forecast_days, plan.train_weeks)
        first = days[0] - plan.train_weeks * s.grid.days_per_week
        sub = s.select_days(first, days[-1])
        row = {"split": skill, "sum_call_vol": int(sub.calls.sum())}
        for m in plan.models:
            vals = [table[(skill, d)][m] for d in days if m in table.get((skill, d), {})]
            row[m] = float(np.mean(vals)) if vals else None
        rows.append(row)
    rows.sort(key=lambda r: (-r["sum_call_vol"], r["split"]))
    return rows


def _win_rates(result: BacktestResult, plan: BacktestPlan, series_set: dict,
               a: str = "RNN_GRU", b: str = "DoublyStoch") -> list[dict]:
    """Share of days where ``a`` beats ``b`` against log median window call volume."""
    if a not in plan.models or b not in plan.models:
        return []
    table = result.wape_table()
    out = []
    for skill in plan.skills:
        s = series_set[skill]
        totals, wins, n = [], 0.0, 0
        for d in forecast_days(s, plan.n_forecast_days, plan.train_weeks):
            first, last = training_window(s, d, plan.train_weeks)
            totals.append(int(s.select_days(first, last).calls.sum()))
            cell = table.get((skill, d), {})
            if a in cell and b in cell:
                n += 1
                wins += 1.0 if cell[a] < cell[b] else 0.0
        med = float(np.median(totals))
        out.append({"split": skill, "log_median_sum_all_calls": math.log(med) if med > 0 else float("-inf"),
                    "win_rate": wins / n if n else None, "n": n})
    return out


def write_records_csv(result: BacktestResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "file", "model", "wape", "flags", "predictions", "actuals"])
        for r in result.records:
            wv = result.cell_wape(r)
            w.writerow([r.skill, r.target_day, r.model_tag, "" if wv is None else repr(wv), ";".join(r.flags),
                        " ".join(f"{p:.6g}" for p in r.predictions),
                        " ".join(str(int(x)) for x in r.actuals)])


def write_summary_csv(result: BacktestResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "sum_call_vol"] + result.models)
        for row in result.summary:
            w.writerow([row["split"], row["sum_call_vol"]] +
                       ["" if row[m] is None else f"{row[m]:.6f}" for m in result.models])


def write_win_rates_csv(result: BacktestResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "log_median_sum_all_calls", "win_rate", "n"])
        for row in result.win_rates:
            w.writerow([row["split"], f"{row['log_median_sum_all_calls']:.6f}",
                        "" if row["win_rate"] is None else f"{row['win_rate']:.6f}", row["n"]])

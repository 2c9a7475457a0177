"""Period grid, count series containers, response transform and error metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

WEEKDAYS = ("MON", "TUE", "WED", "THU", "FRI")
CSV_HEADER = ("skill", "day_num", "day_of_week", "period", "holiday", "calls")

MODEL_TAGS = (
    "DoublyStoch",
    "Winters",
    "ARIMA",
    "SeasonalNaive",
    "NN_Classic",
    "RNN_Simple",
    "RNN_GRU",
    "RNN_LSTM",
    "NN_Classic_cheat",
    "Simple_cheat",
    "GRU_cheat",
    "LSTM_cheat",
)


class ConfigError(ValueError):
    """Invalid configuration, plan or design."""


class SeriesError(ValueError):
    """Raised when a series violates the complete-grid contract."""


class UndefinedWapeError(ZeroDivisionError):
    """Raised when the actuals sum to zero."""


@dataclass(frozen=True)
class PeriodGrid:
    days_per_week: int = 5
    periods_per_day: int = 32

    def __post_init__(self):
        if self.days_per_week < 1 or self.periods_per_day < 1:
            raise ValueError("grid dimensions must be >= 1")

    @property
    def season_length(self) -> int:
        return self.days_per_week * self.periods_per_day


@dataclass(frozen=True)
class Observation:
    skill: str
    day_num: int
    day_of_week: str
    period: int
    holiday: bool
    calls: int


@dataclass(frozen=True)
class SkillSeries:
    """Complete-grid count series for one skill.

    Stored column-wise as numpy arrays of length ``n_days * periods_per_day``
    ordered by (day_num, period). Arrays are made read-only on construction.
    """

    skill: str
    grid: PeriodGrid
    day_num: np.ndarray
    day_of_week: np.ndarray  # 0..days_per_week-1
    period: np.ndarray  # 1..periods_per_day
    holiday: np.ndarray
    calls: np.ndarray

    def __post_init__(self):
        ppd = self.grid.periods_per_day
        arrays = {}
        for name, dtype in (("day_num", np.int64), ("day_of_week", np.int64),
                            ("period", np.int64), ("holiday", bool), ("calls", np.int64)):
            a = np.array(getattr(self, name), dtype=dtype)
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        n = arrays["calls"].size
        if any(a.size != n for a in arrays.values()):
            raise SeriesError("column lengths differ")
        if n == 0 or n % ppd:
            raise SeriesError(f"length {n} is not a whole number of {ppd}-period days")
        if np.any(arrays["calls"] < 0):
            raise SeriesError("calls must be non-negative")
        days = arrays["day_num"].reshape(-1, ppd)
        if np.any(days != days[:, :1]):
            raise SeriesError("each day must occupy one contiguous block of periods")
        if np.any(arrays["period"].reshape(-1, ppd) != np.arange(1, ppd + 1)):
            raise SeriesError("periods within a day must be 1..periods_per_day in order")
        d = days[:, 0]
        if d[0] < 1 or np.any(np.diff(d) <= 0):
            raise SeriesError("day_num must be >= 1 and strictly increasing")
        dow = arrays["day_of_week"].reshape(-1, ppd)
        if np.any(dow != dow[:, :1]) or np.any(dow[:, 0] != (d - 1) % self.grid.days_per_week):
            raise SeriesError("day_of_week inconsistent with day_num")
        hol = arrays["holiday"].reshape(-1, ppd)
        if np.any(hol != hol[:, :1]):
            raise SeriesError("holiday flag must be constant within a day")

    @property
    def n_days(self) -> int:
        return self.calls.size // self.grid.periods_per_day

    @property
    def days(self) -> np.ndarray:
        """Distinct day numbers in order."""
        return self.day_num[:: self.grid.periods_per_day]

    @property
    def day_holiday(self) -> np.ndarray:
        return self.holiday[:: self.grid.periods_per_day]

    @property
    def day_dow(self) -> np.ndarray:
        return self.day_of_week[:: self.grid.periods_per_day]

    def calls_matrix(self) -> np.ndarray:
        """Calls as an (n_days, periods_per_day) array."""
        return self.calls.reshape(-1, self.grid.periods_per_day)

    def day_index(self, day: int) -> int:
        idx = np.searchsorted(self.days, day)
        if idx >= self.n_days or self.days[idx] != day:
            raise KeyError(f"day {day} not in series {self.skill!r}")
        return int(idx)

    def select_days(self, first: int, last: int) -> "SkillSeries":
        """Sub-series holding days with first <= day_num <= last."""
        mask = (self.day_num >= first) & (self.day_num <= last)
        if not mask.any():
            raise SeriesError(f"no days in [{first}, {last}]")
        return SkillSeries(self.skill, self.grid, self.day_num[mask], self.day_of_week[mask],
                           self.period[mask], self.holiday[mask], self.calls[mask])

    def with_calls(self, calls) -> "SkillSeries":
        return SkillSeries(self.skill, self.grid, self.day_num, self.day_of_week,
                           self.period, self.holiday, calls)

    def observations(self) -> list[Observation]:
        return [Observation(self.skill, int(d), WEEKDAYS[w] if self.grid.days_per_week == 5 else str(w),
                            int(p), bool(h), int(c))
                for d, w, p, h, c in zip(self.day_num, self.day_of_week, self.period,
                                         self.holiday, self.calls)]

    @classmethod
    def from_days(cls, skill: str, grid: PeriodGrid, calls, first_day: int = 1,
                  holiday_days: Iterable[int] = ()) -> "SkillSeries":
        """Build a series from an (n_days, periods_per_day) count matrix."""
        calls = np.asarray(calls).reshape(-1, grid.periods_per_day)
        n_days, ppd = calls.shape
        days = np.arange(first_day, first_day + n_days)
        hol = np.isin(days, list(holiday_days))
        return cls(
            skill=skill,
            grid=grid,
            day_num=np.repeat(days, ppd),
            day_of_week=np.repeat((days - 1) % grid.days_per_week, ppd),
            period=np.tile(np.arange(1, ppd + 1), n_days),
            holiday=np.repeat(hol, ppd),
            calls=calls.ravel(),
        )


@dataclass
class ForecastRecord:
    model_tag: str
    skill: str
    target_day: int
    predictions: np.ndarray
    actuals: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=float)
        if not np.all(np.isfinite(self.predictions)) or np.any(self.predictions < 0):
            raise ValueError(f"{self.model_tag}: predictions must be finite and >= 0")

    @property
    def wape(self) -> float:
        if self.actuals is None:
            raise ValueError("record has not been scored")
        return wape(self.actuals, self.predictions)


def sqrt_transform(count):
    """Variance-stabilizing transform ``sqrt(count + 0.25)``."""
    c = np.asarray(count, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    out = np.sqrt(c + 0.25)
    return float(out) if out.ndim == 0 else out


def inverse_transform(y):
    """Back-transform to the count scale, clamping negative latents to zero calls."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    out = np.maximum(y * y - 0.25, 0.0)
    return float(out) if out.ndim == 0 else out


def wape(actuals, predictions) -> float:
    """Weighted absolute percentage error, returned as a fraction."""
    a = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if a.shape != p.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {p.shape}")
    denom = a.sum()
    if denom <= 0:
        raise UndefinedWapeError("sum of actuals is zero; WAPE undefined")
    return float(np.abs(a - p).sum() / denom)


def moving_average(values, window: int) -> np.ndarray:
    """Trailing-window means; position k averages values[k:k+window]."""
    v = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > v.size:
        raise ValueError(f"window {window} exceeds length {v.size}")
    return np.lib.stride_tricks.sliding_window_view(v, window).mean(axis=1)


# -- CSV ---------------------------------------------------------------------

def _dow_code(token: str, grid: PeriodGrid) -> int:
    token = token.strip().upper()
    if grid.days_per_week == 5 and token in WEEKDAYS:
        return WEEKDAYS.index(token)
    raise SeriesError(f"unknown day_of_week {token!r}")


def read_series_csv(path_or_buf, grid: PeriodGrid | None = None) -> dict[str, SkillSeries]:
    """Read the series CSV format into one SkillSeries per skill."""
    grid = grid or PeriodGrid()
    if isinstance(path_or_buf, (str, Path)):
        with open(path_or_buf, newline="") as fh:
            return read_series_csv(io.StringIO(fh.read()), grid)
    reader = csv.reader(path_or_buf)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise SeriesError(f"bad header {header!r}; expected {','.join(CSV_HEADER)}")
    cols: dict[str, dict[str, list]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise SeriesError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
        skill, day, dow, period, hol, calls = row
        try:
            rec = cols.setdefault(skill, {k: [] for k in CSV_HEADER[1:]})
            rec["day_num"].append(int(day))
            rec["day_of_week"].append(_dow_code(dow, grid))
            rec["period"].append(int(period))
            if hol not in ("0", "1"):
                raise SeriesError(f"holiday must be 0 or 1, got {hol!r}")
            rec["holiday"].append(hol == "1")
            rec["calls"].append(int(calls))
        except ValueError as exc:
            raise SeriesError(f"line {lineno}: {exc}") from exc
    out = {}
    for skill, rec in cols.items():
        order = np.lexsort((rec["period"], rec["day_num"]))
        out[skill] = SkillSeries(skill, grid, *(np.asarray(rec[k])[order] for k in CSV_HEADER[1:]))
    return out


def write_series_csv(series: Sequence[SkillSeries] | SkillSeries, path_or_buf) -> None:
    if isinstance(series, SkillSeries):
        series = [series]
    if isinstance(path_or_buf, (str, Path)):
        with open(path_or_buf, "w", newline="") as fh:
            write_series_csv(series, fh)
        return
    w = csv.writer(path_or_buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in series:
        names = WEEKDAYS if s.grid.days_per_week == 5 else [str(i) for i in range(s.grid.days_per_week)]
        for d, dw, p, h, c in zip(s.day_num, s.day_of_week, s.period, s.holiday, s.calls):
            w.writerow((s.skill, int(d), names[dw], int(p), int(h), int(c)))


def p_group(period, size: int = 3):
    """Holiday pooling group: periods 1-3 -> 1, 4-6 -> 2, ..."""
    return (np.asarray(period) - 1) // size + 1


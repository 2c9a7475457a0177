"""Network input encoding: flat design matrices and day-batched sequence arrays."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import PeriodGrid, SkillSeries, sqrt_transform


class CoverageError(ValueError):
    """Raised when a lag or cheat input cannot be resolved from observed history."""


@dataclass(frozen=True)
class Standardizer:
    mean: float
    sd: float

    @classmethod
    def fit(cls, values) -> "Standardizer":
        v = np.asarray(values, dtype=float)
        sd = float(v.std())
        # a constant column maps to zeros rather than dividing by zero
        return cls(float(v.mean()), sd if sd > 0 else 1.0)

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.sd

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.sd + self.mean


@dataclass
class CheatInputs:
    """Transformed-scale predictions from (mixed, Winters, ARIMA) for each encoded row."""

    train: np.ndarray  # (n_rows, 3)
    target: np.ndarray | None = None  # (periods_per_day, 3)
    flags: list[str] = field(default_factory=list)


CHEAT_COLUMNS = ("cheat_mixed", "cheat_winters", "cheat_arima")


def column_names(grid: PeriodGrid, cheat: bool) -> list[str]:
    names = [f"dow_{i + 1}" for i in range(grid.days_per_week)]
    names += [f"period_{p}" for p in range(1, grid.periods_per_day + 1)]
    names += ["lag_day", "lag_week", "holiday_today", "holiday_yesterday", "holiday_lastweek",
              "day_number"]
    if cheat:
        names += list(CHEAT_COLUMNS)
    return names


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray  # standardized transformed-scale targets
    columns: list[str]
    row_days: np.ndarray
    target_scaler: Standardizer
    scalers: dict[str, Standardizer]
    X_target: np.ndarray | None = None
    target_day: int | None = None

    @property
    def width(self) -> int:
        return self.X.shape[1]


def _day_rows(series: SkillSeries, day: int, before: int | None) -> np.ndarray:
    """Transformed volumes for ``day``; must be observed and earlier than ``before``."""
    if before is not None and day >= before:
        raise CoverageError(f"day {day} is not observed before day {before}")
    try:
        i = series.day_index(day)
    except KeyError as exc:
        raise CoverageError(str(exc)) from exc
    return sqrt_transform(series.calls_matrix()[i])


def _is_holiday(series: SkillSeries, day: int) -> float:
    try:
        return float(series.day_holiday[series.day_index(day)])
    except KeyError:
        return 0.0


def _raw_rows(series: SkillSeries, days, before: int | None):
    g = series.grid
    ppd, dpw = g.periods_per_day, g.days_per_week
    blocks = []
    for d in days:
        lag_day = _day_rows(series, d - 1, before)
        lag_week = _day_rows(series, d - dpw, before)
        dow = (d - 1) % dpw
        onehot_dow = np.zeros((ppd, dpw))
        onehot_dow[:, dow] = 1.0
        hol = np.array([_is_holiday(series, d), _is_holiday(series, d - 1), _is_holiday(series, d - dpw)])
        blocks.append(np.column_stack([
            onehot_dow, np.eye(ppd), lag_day, lag_week,
            np.tile(hol, (ppd, 1)), np.full(ppd, float(d)),
        ]))
    return np.vstack(blocks)


def build_design(series: SkillSeries, first_day: int, last_day: int, target_day: int | None = None,
                 cheat: CheatInputs | None = None) -> Design:
    """Encode the training span ``[first_day, last_day]`` (and optionally the target day).

    The first week of the span only feeds lags, so rows start at
    ``first_day + days_per_week``. Continuous columns and targets are
    standardized with statistics from the encoded training rows; cheat
    columns reuse the target standardizer. Nothing here reads the target
    day's calls.
    """
    g = series.grid
    ppd, dpw = g.periods_per_day, g.days_per_week
    if last_day - first_day + 1 < 2 * dpw:
        raise CoverageError("training span must cover at least two weeks")
    horizon = target_day if target_day is not None else last_day + 1
    if target_day is not None and target_day <= last_day:
        raise CoverageError("target day must follow the training span")
    days = np.arange(first_day + dpw, last_day + 1)
    raw = _raw_rows(series, days, before=horizon)
    y_raw = np.concatenate([_day_rows(series, d, before=horizon) for d in days])
    i_lag = dpw + ppd
    scalers = {
        "lag_day": Standardizer.fit(raw[:, i_lag]),
        "lag_week": Standardizer.fit(raw[:, i_lag + 1]),
        "day_number": Standardizer.fit(raw[:, i_lag + 5]),
    }
    tscale = Standardizer.fit(y_raw)

    def finish(block, cheat_block):
        out = block.copy()
        out[:, i_lag] = scalers["lag_day"].transform(block[:, i_lag])
        out[:, i_lag + 1] = scalers["lag_week"].transform(block[:, i_lag + 1])
        out[:, i_lag + 5] = scalers["day_number"].transform(block[:, i_lag + 5])
        if cheat_block is not None:
            out = np.column_stack([out, tscale.transform(cheat_block)])
        return out

    X_target = None
    if cheat is not None:
        train_cheat = np.asarray(cheat.train, dtype=float)
        if train_cheat.shape != (raw.shape[0], 3) or not np.all(np.isfinite(train_cheat)):
            raise CoverageError(f"cheat inputs must be finite with shape {(raw.shape[0], 3)}")
    X = finish(raw, None if cheat is None else cheat.train)
    if target_day is not None:
        tcheat = None
        if cheat is not None:
            if cheat.target is None or np.shape(cheat.target) != (ppd, 3):
                raise CoverageError("cheat inputs missing for the target day")
            tcheat = cheat.target
        X_target = finish(_raw_rows(series, [target_day], before=target_day), tcheat)
    return Design(X, tscale.transform(y_raw), column_names(g, cheat is not None),
                  np.repeat(days, ppd), tscale, scalers, X_target, target_day)


def to_sequences(matrix, targets, grid: PeriodGrid):
    """Reshape day-major rows into (days, periods_per_day, width) and (days, periods_per_day)."""
    M = np.asarray(matrix)
    t = np.asarray(targets)
    ppd = grid.periods_per_day
    if M.shape[0] % ppd or t.shape[0] != M.shape[0]:
        raise ValueError(f"{M.shape[0]} rows do not split into {ppd}-period days")
    return M.reshape(-1, ppd, M.shape[1]), t.reshape(-1, ppd)


def write_design_csv(design: Design, path) -> None:
    """Debug dump of the encoded matrix with the target column appended."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_num"] + design.columns + ["target"])
        for d, row, t in zip(design.row_days, design.X, design.y):
            w.writerow([int(d)] + [repr(float(v)) for v in row] + [repr(float(t))])

"""Synthetic skill series drawn from the doubly stochastic process.

The generator works on the square-root scale: a weekday-by-period mean surface,
additive holiday shifts pooled over groups of three periods, an AR(1) random
effect per day and AR(1) residuals within each day. Counts are the rounded
back-transform of that latent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, PeriodGrid, SkillSeries, inverse_transform, p_group


def n_pgroups(grid: PeriodGrid) -> int:
    return int(p_group(grid.periods_per_day))


@dataclass
class SimConfig:
    grid: PeriodGrid = field(default_factory=PeriodGrid)
    n_weeks: int = 15
    seed: int = 0
    base_surface: np.ndarray | None = None
    holiday_days: tuple[int, ...] = ()
    holiday_shift: np.ndarray | None = None
    sigma_day: float = 0.3
    rho_day: float = 0.8
    sigma_resid: float = 0.5
    rho_resid: float = 0.4
    volume_scale: float = 1.0

    def __post_init__(self):
        if self.base_surface is None:
            self.base_surface = default_surface(self.grid, 10.0)
        self.base_surface = np.asarray(self.base_surface, dtype=float)
        if self.holiday_shift is None:
            self.holiday_shift = np.zeros(n_pgroups(self.grid))
        self.holiday_shift = np.asarray(self.holiday_shift, dtype=float)
        self.holiday_days = tuple(int(d) for d in self.holiday_days)
        self.validate()

    def validate(self) -> None:
        g = self.grid
        if self.n_weeks < 1:
            raise ConfigError("n_weeks must be >= 1")
        if self.base_surface.shape != (g.days_per_week, g.periods_per_day):
            raise ConfigError(f"base_surface must have shape {(g.days_per_week, g.periods_per_day)}")
        if np.any(self.base_surface <= 0):
            raise ConfigError("base_surface entries must be > 0")
        if self.holiday_shift.shape != (n_pgroups(g),):
            raise ConfigError(f"holiday_shift must have {n_pgroups(g)} entries (one per p_group)")
        if not (abs(self.rho_day) < 1 and abs(self.rho_resid) < 1):
            raise ConfigError("rho_day and rho_resid must lie in (-1, 1)")
        if self.sigma_day < 0 or self.sigma_resid < 0:
            raise ConfigError("sigma_day and sigma_resid must be >= 0")
        if self.volume_scale <= 0:
            raise ConfigError("volume_scale must be > 0")

    def to_json(self) -> str:
        d = asdict(self)
        d["grid"] = asdict(self.grid)
        d["base_surface"] = self.base_surface.tolist()
        d["holiday_shift"] = self.holiday_shift.tolist()
        d["holiday_days"] = list(self.holiday_days)
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown SimConfig fields: {sorted(extra)}")
        d = dict(d)
        if "grid" in d:
            d["grid"] = PeriodGrid(**d["grid"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path_or_text) -> "SimConfig":
        if isinstance(path_or_text, Path) or (isinstance(path_or_text, str)
                                              and not path_or_text.lstrip().startswith("{")):
            path_or_text = Path(path_or_text).read_text()
        return cls.from_dict(json.loads(path_or_text))


def default_surface(grid: PeriodGrid, peak_scale: float) -> np.ndarray:
    """Smooth single-hump intraday profile per weekday on the transformed scale.

    Monday is the busiest day and the level decays through the week; the
    Monday mid-day periods equal ``peak_scale``. Every entry is at least
    ``0.064 * peak_scale``, so the surface stays >= 0.5 for peak_scale >= 8.
    The surface is linear in ``peak_scale``.
    """
    if peak_scale <= 0:
        raise ValueError("peak_scale must be > 0")
    ppd = grid.periods_per_day
    t = (np.arange(ppd) + 0.5) / ppd
    hump = 0.1 + 0.9 * np.sin(np.pi * t) ** 2
    hump /= hump.max()
    day_mult = 1.0 - 0.06 * np.arange(grid.days_per_week)
    # weekday-specific skew so profiles differ in shape as well as level
    skew = 1.0 + 0.04 * np.outer(np.arange(grid.days_per_week), np.cos(np.pi * t))
    return peak_scale * day_mult[:, None] * hump[None, :] * skew


def ar1_path(rng: np.random.Generator, n: int, sigma: float, rho: float, size=()) -> np.ndarray:
    """Stationary AR(1) draws along the last axis, marginal SD ``sigma``."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    e = rng.standard_normal(shape + (n,))
    out = np.empty_like(e)
    out[..., 0] = e[..., 0]
    innov = np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        out[..., t] = rho * out[..., t - 1] + innov * e[..., t]
    return sigma * out


def simulate_latent(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Transformed-scale latent (n_days, periods_per_day) and the day effects."""
    g = config.grid
    n_days = config.n_weeks * g.days_per_week
    rng = np.random.default_rng(config.seed)
    b = ar1_path(rng, n_days, config.sigma_day, config.rho_day)
    eps = ar1_path(rng, g.periods_per_day, config.sigma_resid, config.rho_resid, size=n_days)
    days = np.arange(1, n_days + 1)
    dow = (days - 1) % g.days_per_week
    mean = config.base_surface[dow] * config.volume_scale
    hol = np.isin(days, config.holiday_days)
    groups = p_group(np.arange(1, g.periods_per_day + 1)) - 1
    mean = mean + hol[:, None] * config.holiday_shift[groups][None, :]
    return mean + b[:, None] + eps, b


def simulate_skill(config: SimConfig, skill: str = "S1") -> SkillSeries:
    """Draw one complete-grid series; deterministic given ``config.seed``."""
    y, _ = simulate_latent(config)
    calls = np.rint(inverse_transform(y)).astype(np.int64)
    return SkillSeries.from_days(skill, config.grid, calls, holiday_days=config.holiday_days)

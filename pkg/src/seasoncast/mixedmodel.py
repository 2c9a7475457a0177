"""Doubly stochastic linear mixed model for transformed call counts.

Model on the square-root scale::

    y = X beta + Z b + eps,   b ~ N(0, G),   eps ~ N(0, R)

``X`` holds weekday-by-period cells plus holiday effects pooled over groups of
three periods (no intercept). ``G`` is a spatial-power AR(1) over the numeric
day counter and ``R`` is block diagonal with one AR(1) block per day.

Likelihood evaluations exploit the structure of a complete grid: each day's
residual block is whitened with the closed-form AR(1) (Prais-Winsten)
transform and the day effects are folded in through the Woodbury identity, so
one evaluation costs O(n p + D^3) rather than O(n^3). ``marginal_covariance``
and ``dense_profile_loglik`` give the direct dense route used as an oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .core import ForecastRecord, SkillSeries, WEEKDAYS, inverse_transform, p_group, sqrt_transform

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CovParams:
    sigma2_day: float
    rho_day: float
    sigma2_resid: float
    rho_resid: float

    def __post_init__(self):
        if self.sigma2_day < 0 or self.sigma2_resid <= 0:
            raise ValueError("need sigma2_day >= 0 and sigma2_resid > 0")
        if not (abs(self.rho_day) < 1 and abs(self.rho_resid) < 1):
            raise ValueError("correlations must lie in (-1, 1)")

    def to_unconstrained(self) -> np.ndarray:
        return np.array([math.log(max(self.sigma2_day, 1e-300)), math.atanh(self.rho_day),
                         math.log(self.sigma2_resid), math.atanh(self.rho_resid)])

    @classmethod
    def from_unconstrained(cls, theta) -> "CovParams":
        # clip keeps tanh strictly inside (-1, 1) in floating point
        t = np.clip(np.asarray(theta, dtype=float), -700.0, 700.0)
        rho_d = float(np.clip(np.tanh(t[1]), -1 + 1e-12, 1 - 1e-12))
        rho_r = float(np.clip(np.tanh(t[3]), -1 + 1e-12, 1 - 1e-12))
        return cls(float(np.exp(t[0])), rho_d, max(float(np.exp(t[2])), 1e-300), rho_r)


@dataclass
class FixedDesign:
    X: np.ndarray
    names: list[str]

    @property
    def n_cells(self) -> int:
        return sum(1 for n in self.names if n.startswith("dow="))


@dataclass
class MixedModelFit:
    beta: dict[str, float]
    cov: CovParams
    blups: np.ndarray
    blup_days: np.ndarray
    loglik: float
    trace: list[float]
    converged: bool
    iterations: int
    reml: bool = True
    dropped: list[str] = field(default_factory=list)
    fitted: np.ndarray | None = None

    def to_json(self) -> str:
        return json.dumps({
            "beta": self.beta,
            "cov": {"sigma2_day": self.cov.sigma2_day, "rho_day": self.cov.rho_day,
                    "sigma2_resid": self.cov.sigma2_resid, "rho_resid": self.cov.rho_resid},
            "blups": dict(zip(map(str, self.blup_days.tolist()), self.blups.tolist())),
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "method": "REML" if self.reml else "ML",
            "dropped": self.dropped,
        }, indent=2)


def cell_name(dow: int, period: int) -> str:
    return f"dow={WEEKDAYS[dow] if dow < len(WEEKDAYS) else dow}:period={period}"


def holiday_name(group: int) -> str:
    return f"p_group={group}:holiday"


def design_rows(grid, dow, period, holiday) -> tuple[np.ndarray, list[str]]:
    """Indicator rows for arbitrary (dow, period, holiday) metadata."""
    dow = np.asarray(dow)
    period = np.asarray(period)
    holiday = np.asarray(holiday, dtype=bool)
    ppd = grid.periods_per_day
    n_groups = int(p_group(ppd))
    names = [cell_name(d, p) for d in range(grid.days_per_week) for p in range(1, ppd + 1)]
    names += [holiday_name(g) for g in range(1, n_groups + 1)]
    X = np.zeros((dow.size, len(names)))
    rows = np.arange(dow.size)
    X[rows, dow * ppd + period - 1] = 1.0
    hcol = grid.season_length + p_group(period) - 1
    X[rows[holiday], hcol[holiday]] = 1.0
    return X, names


def build_fixed_design(series: SkillSeries) -> FixedDesign:
    """Weekday x period cells plus p_group x holiday columns, no intercept."""
    X, names = design_rows(series.grid, series.day_of_week, series.period, series.holiday)
    return FixedDesign(X, names)


def estimable_columns(X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Indices of a maximal linearly independent column subset, in original order."""
    nz = np.flatnonzero(np.any(X != 0, axis=0))
    if nz.size == 0:
        return nz
    _, r, piv = linalg.qr(X[:, nz], mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > tol * max(d[0], 1.0)))
    return np.sort(nz[piv[:rank]])


# -- covariance ----------------------------------------------------------------

def marginal_covariance(cov: CovParams, day_nums, periods, periods_per_day: int | None = None) -> np.ndarray:
    """Dense n x n marginal covariance ``Z G Z' + R``.

    Observation i sits on day ``day_nums[i]`` at ``periods[i]``. Day effects
    correlate as ``rho_day ** |d_i - d_j|``; residuals correlate as
    ``rho_resid ** |p_i - p_j|`` within a day and are independent across days.
    """
    d = np.asarray(day_nums, dtype=float)
    p = np.asarray(periods, dtype=float)
    dd = np.abs(d[:, None] - d[None, :])
    same = dd == 0
    V = cov.sigma2_day * _power(cov.rho_day, dd)
    V += np.where(same, cov.sigma2_resid * _power(cov.rho_resid, np.abs(p[:, None] - p[None, :])), 0.0)
    return V


def _power(rho: float, lag: np.ndarray) -> np.ndarray:
    if rho == 0.0:
        return (lag == 0).astype(float)
    return np.sign(rho) ** lag * np.abs(rho) ** lag


def dense_profile_loglik(cov: CovParams, X, y, day_nums, periods) -> tuple[float, np.ndarray]:
    """Direct dense GLS/loglik evaluation. O(n^3); intended for small checks."""
    V = marginal_covariance(cov, day_nums, periods)
    c = linalg.cho_factor(V, lower=True)
    Vi_X = linalg.cho_solve(c, X)
    Vi_y = linalg.cho_solve(c, y)
    beta = np.linalg.solve(X.T @ Vi_X, X.T @ Vi_y)
    r = y - X @ beta
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    q = r @ linalg.cho_solve(c, r)
    return -0.5 * (logdet + q + y.size * LOG2PI), beta


class _GridLikelihood:
    """Structured likelihood on a complete (n_days, periods_per_day) grid."""

    def __init__(self, X, y, day_nums, periods_per_day: int):
        self.P = periods_per_day
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.D = self.y.size // self.P
        self.days = np.asarray(day_nums, dtype=float)[:: self.P]
        self.lag = np.abs(self.days[:, None] - self.days[None, :])
        # stacked [X | y] as (D, P, k) so every transform acts on both at once
        self.M = np.concatenate([self.X, self.y[:, None]], axis=1).reshape(self.D, self.P, -1)

    def _whiten(self, rho: float, sigma2: float) -> np.ndarray:
        # R^{-1/2} applied per day: Prais-Winsten rows scaled to unit variance
        M = self.M
        out = np.empty_like(M)
        s = math.sqrt(1.0 - rho * rho)
        out[:, 0, :] = M[:, 0, :]
        out[:, 1:, :] = (M[:, 1:, :] - rho * M[:, :-1, :]) / s
        return out / math.sqrt(sigma2)

    def evaluate(self, cov: CovParams, want_blup: bool = False, reml: bool = False):
        P, D = self.P, self.D
        rho_r, s2r = cov.rho_resid, cov.sigma2_resid
        Mw = self._whiten(rho_r, s2r)
        k = Mw.shape[2]
        # a = A^{-1} 1 for the AR(1) block A = s2r * rho^|i-j|
        ones = np.ones(P)
        a = np.empty(P)
        one_minus = 1.0 - rho_r
        a[:] = one_minus * one_minus
        a[0] = a[-1] = one_minus
        if P == 1:
            a[0] = 1.0 - rho_r * rho_r
        a /= (1.0 - rho_r * rho_r) * s2r
        c = float(a @ ones)
        U = np.einsum("p,dpk->dk", a, self.M)  # Z' R^{-1} [X|y]
        G = cov.sigma2_day * _power(cov.rho_day, self.lag)
        B = np.eye(D) + c * G
        Bc = linalg.cho_factor(B, lower=True)
        W = linalg.cho_solve(Bc, G)  # G (I + cG)^{-1}
        W = 0.5 * (W + W.T)
        flat = Mw.reshape(D * P, k)
        S = flat.T @ flat - U.T @ W @ U  # [X|y]' V^{-1} [X|y]
        XtVX, XtVy, ytVy = S[:-1, :-1], S[:-1, -1], S[-1, -1]
        try:
            cf = linalg.cho_factor(XtVX, lower=True)
        except linalg.LinAlgError:
            cf = linalg.cho_factor(XtVX + 1e-10 * np.eye(XtVX.shape[0]), lower=True)
        beta = linalg.cho_solve(cf, XtVy)
        quad = ytVy - XtVy @ beta
        logdet = D * (P * math.log(s2r) + (P - 1) * math.log(1.0 - rho_r * rho_r))
        logdet += 2.0 * np.sum(np.log(np.diag(Bc[0])))
        ll = -0.5 * (logdet + quad + D * P * LOG2PI)
        if reml:
            ll -= np.sum(np.log(np.diag(cf[0]))) - 0.5 * beta.size * LOG2PI
        if not want_blup:
            return ll, beta
        w = np.append(-beta, 1.0)
        blup = W @ (U @ w)
        return ll, beta, blup


def profile_loglik(cov: CovParams, X, y, day_nums, periods_per_day: int,
                   reml: bool = False) -> tuple[float, np.ndarray]:
    """Gaussian loglik with beta profiled out by GLS, on a complete grid.

    Returns ``(loglik, beta_gls)``; ``X`` must have full column rank. With
    ``reml=True`` the restricted loglik adds ``-0.5 log|X' V^-1 X|`` and uses
    ``n - p`` in the normalizing constant.
    """
    return _GridLikelihood(X, y, day_nums, periods_per_day).evaluate(cov, reml=reml)


def blup_day_effects(cov: CovParams, X, y, day_nums, periods_per_day: int) -> np.ndarray:
    """BLUP of the day effects, ``G Z' V^{-1} (y - X beta_gls)``."""
    return _GridLikelihood(X, y, day_nums, periods_per_day).evaluate(cov, want_blup=True)[2]


def dense_blups(cov: CovParams, X, y, day_nums, periods) -> np.ndarray:
    """Dense-formula BLUPs for small instances."""
    d = np.asarray(day_nums)
    days = np.unique(d)
    Z = (d[:, None] == days[None, :]).astype(float)
    G = cov.sigma2_day * _power(cov.rho_day, np.abs(days[:, None] - days[None, :]).astype(float))
    V = marginal_covariance(cov, day_nums, periods)
    _, beta = dense_profile_loglik(cov, X, y, day_nums, periods)
    return G @ Z.T @ np.linalg.solve(V, y - X @ beta)


# -- fitting -------------------------------------------------------------------

def starting_values(X, y) -> CovParams:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    s2 = max(float(np.mean((y - X @ beta) ** 2)), 1e-8)
    return CovParams(0.1 * s2, 0.3, 0.9 * s2, 0.3)


def fit(series: SkillSeries, maxiter: int = 150, convf: float = 1e-6,
        maxfev: int = 10000, reml: bool = True) -> MixedModelFit:
    """Likelihood fit of the covariance parameters (REML by default, ML with
    ``reml=False``).

    Nelder-Mead on (log variances, atanh correlations) from a fixed start;
    the simplex stops once the spread of its loglik values falls below
    ``convf`` relative to the current loglik, or after ``maxiter`` iterations.
    """
    ppd = series.grid.periods_per_day
    if series.n_days < 2 * series.grid.days_per_week:
        raise ValueError("need at least two weeks of data")
    design = build_fixed_design(series)
    keep = estimable_columns(design.X)
    X = design.X[:, keep]
    y = sqrt_transform(series.calls)
    lik = _GridLikelihood(X, y, series.day_num, ppd)
    start = starting_values(X, y)

    def negll(theta):
        try:
            return -lik.evaluate(CovParams.from_unconstrained(theta), reml=reml)[0]
        except (linalg.LinAlgError, ValueError, FloatingPointError):
            return np.inf

    theta0 = start.to_unconstrained()
    f0 = negll(theta0)
    trace = [-f0]

    def record(xk):
        trace.append(-negll(xk))

    res = optimize.minimize(
        negll, theta0, method="Nelder-Mead", callback=record,
        options={"maxiter": maxiter, "maxfev": maxfev, "xatol": 1e-4,
                 "fatol": convf * max(abs(f0), 1.0), "initial_simplex": _simplex(theta0)},
    )
    cov = CovParams.from_unconstrained(res.x)
    ll, beta_k, blup = lik.evaluate(cov, want_blup=True, reml=reml)
    beta = np.zeros(design.X.shape[1])
    beta[keep] = beta_k
    dropped = [design.names[j] for j in range(len(design.names)) if j not in set(keep.tolist())]
    fitted = design.X @ beta + np.repeat(blup, ppd)
    return MixedModelFit(
        beta=dict(zip(design.names, beta.tolist())),
        cov=cov,
        blups=blup,
        blup_days=series.days.copy(),
        loglik=float(ll),
        trace=trace,
        converged=bool(res.success),
        iterations=int(res.nit),
        reml=reml,
        dropped=dropped,
        fitted=fitted,
    )


def _simplex(theta0: np.ndarray) -> np.ndarray:
    # steps of 0.5 on log-variance / atanh scale
    sim = np.tile(theta0, (theta0.size + 1, 1))
    for i in range(theta0.size):
        sim[i + 1, i] += 0.5
    return sim


def forecast_latent(model: MixedModelFit, grid, target_day: int, day_of_week: int | None = None,
                    holiday: bool = False) -> tuple[np.ndarray, list[str]]:
    """Transformed-scale day-ahead forecast: cell means plus ``rho_day ** gap * b_T``.

    ``gap`` is the day-counter distance from the last fitted day. Returns the
    forecast and any flags about unestimable cells.
    """
    last = int(model.blup_days[-1])
    if target_day <= last:
        raise ValueError("target day must follow the training window")
    if day_of_week is None:
        day_of_week = (target_day - 1) % grid.days_per_week
    periods = np.arange(1, grid.periods_per_day + 1)
    Xr, names = design_rows(grid, np.full(periods.size, day_of_week), periods,
                            np.full(periods.size, bool(holiday)))
    beta = np.array([model.beta[n] for n in names])
    flags = []
    missing = sorted(set(model.dropped) & {cell_name(day_of_week, p) for p in periods})
    if missing:
        flags.append("unestimable-cells:" + ",".join(missing))
    extrap = model.cov.rho_day ** (target_day - last) * model.blups[-1]
    return Xr @ beta + extrap, flags


def forecast_next_day(model: MixedModelFit, series: SkillSeries, target_day: int,
                      day_of_week: int | None = None, holiday: bool = False,
                      model_tag: str = "DoublyStoch") -> ForecastRecord:
    """Day-ahead forecast on the count scale."""
    latent, flags = forecast_latent(model, series.grid, target_day, day_of_week, holiday)
    return ForecastRecord(model_tag, series.skill, target_day, inverse_transform(latent), flags=flags)


def fitted_values(model: MixedModelFit) -> np.ndarray:
    """In-sample fitted values ``X beta + Z b`` on the transformed scale."""
    return model.fitted

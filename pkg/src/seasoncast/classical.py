"""Additive Holt-Winters smoothing and seasonal ARIMA(1,0,1)(0,1,1)_s by CSS.

Both work on whatever scale they are handed; the harness passes
square-root-transformed counts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, signal

WINTERS_GRID = np.round(np.arange(0.01, 1.0, 0.07), 2)  # 0.01, 0.08, ..., 0.99


# -- Winters -------------------------------------------------------------------

@dataclass
class WintersState:
    level: float
    trend: float
    seasonal: np.ndarray  # indices for the next season_length steps, in order
    alpha: float
    beta_t: float
    gamma: float
    mae: float
    fitted: np.ndarray | None = None  # one-step in-sample forecasts (nan in first season)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "fitted"}
        d["seasonal"] = self.seasonal.tolist()
        return json.dumps(d, indent=2)


def _winters_pass(y, L, alpha, beta, gamma):
    """Vectorized additive recursions for arrays of smoothing weights.

    ``alpha``/``beta``/``gamma`` broadcast against each other; returns final
    level, trend, seasonal ring (oldest first), one-step forecasts and MAE.
    """
    alpha, beta, gamma = np.broadcast_arrays(*(np.asarray(w, dtype=float) for w in (alpha, beta, gamma)))
    shape = alpha.shape
    m1 = y[:L].mean()
    b0 = (y[L:2 * L].mean() - m1) / L
    # state at the end of season one: trend-line value and detrended deviations
    level = np.full(shape, m1 + b0 * (L - 1) / 2.0)
    trend = np.full(shape, b0)
    dev = y[:L] - (m1 + b0 * (np.arange(L) - (L - 1) / 2.0))
    season = np.broadcast_to(dev, shape + (L,)).copy()
    preds = np.full(shape + (y.size,), np.nan)
    abs_err = np.zeros(shape)
    for t in range(L, y.size):
        s = season[..., t % L]
        f = level + trend + s
        preds[..., t] = f
        e = y[t] - f
        abs_err += np.abs(e)
        new_level = alpha * (y[t] - s) + (1 - alpha) * (level + trend)
        trend = beta * (new_level - level) + (1 - beta) * trend
        season[..., t % L] = gamma * (y[t] - new_level) + (1 - gamma) * s
        level = new_level
    mae = abs_err / max(y.size - L, 1)
    return level, trend, season, preds, mae


def winters_fit(y, season_length: int = 160, grid=WINTERS_GRID) -> WintersState:
    """Additive Holt-Winters with weights picked by exhaustive grid search.

    Initial level and trend come from the means of the first two seasons and
    the seasonal indices are first-season deviations from that trend line. The
    weights minimize in-sample one-step MAE over ``grid`` cubed; ties go to
    the first grid point in (alpha, beta, gamma) lexicographic order.
    """
    y = np.asarray(y, dtype=float)
    L = season_length
    if y.size < 2 * L:
        raise ValueError(f"need at least two seasons ({2 * L} points), got {y.size}")
    g = np.asarray(grid, dtype=float)
    A, B, C = np.meshgrid(g, g, g, indexing="ij")
    *_, mae = _winters_pass(y, L, A, B, C)
    i, j, k = np.unravel_index(np.argmin(mae), mae.shape)
    return _winters_state(y, L, g[i], g[j], g[k])


def _winters_state(y, L, alpha, beta, gamma) -> WintersState:
    level, trend, season, preds, mae = _winters_pass(y, L, alpha, beta, gamma)
    n = y.size
    ring = np.roll(season, -(n % L))  # ring[h-1] is the index used at step n+h-1
    return WintersState(float(level), float(trend), ring, float(alpha), float(beta),
                        float(gamma), float(mae), preds)


def winters_run(y, season_length, alpha, beta_t, gamma) -> WintersState:
    """Run the recursions at fixed weights (no search)."""
    y = np.asarray(y, dtype=float)
    if y.size < 2 * season_length:
        raise ValueError("need at least two seasons")
    return _winters_state(y, season_length, alpha, beta_t, gamma)


def winters_forecast(state: WintersState, horizon: int = 32) -> np.ndarray:
    h = np.arange(1, horizon + 1)
    L = state.seasonal.size
    return state.level + h * state.trend + state.seasonal[(h - 1) % L]


# -- seasonal ARIMA --------------------------------------------------------------

@dataclass
class ArimaFit:
    phi: float
    theta: float
    Theta: float
    sigma2: float
    css: float
    season_length: int = 160
    at_bounds: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def seasonal_difference(y, s: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[s:] - y[:-s]


def seasonal_integrate(w, head, s: int) -> np.ndarray:
    """Inverse of ``seasonal_difference`` given the first ``s`` values."""
    out = np.concatenate([np.asarray(head, dtype=float), np.empty(len(w))])
    for t in range(len(w)):
        out[s + t] = w[t] + out[t]
    return out


def _ma_poly(theta: float, Theta: float, s: int) -> np.ndarray:
    # (1 + theta B)(1 + Theta B^s)
    c = np.zeros(s + 2)
    c[0] = 1.0
    c[1] = theta
    c[s] = Theta
    c[s + 1] = theta * Theta
    return c


def arima_residuals(w, phi, theta, Theta, s: int) -> np.ndarray:
    """Innovations of the differenced series with zero pre-sample values.

    e_t = w_t - phi w_{t-1} - theta e_{t-1} - Theta e_{t-s} - theta Theta e_{t-s-1}
    """
    return signal.lfilter([1.0, -phi], _ma_poly(theta, Theta, s), np.asarray(w, dtype=float))


def css(w, phi, theta, Theta, s: int) -> float:
    e = arima_residuals(w, phi, theta, Theta, s)
    return float(np.sum(e[1:] ** 2))


def arima_fit(y, season_length: int = 160, start=(0.1, 0.1, 0.1), bound: float = 0.98) -> ArimaFit:
    """Conditional-sum-of-squares fit of ARIMA(1,0,1)(0,1,1)_s.

    Nelder-Mead over (phi, theta, Theta) in atanh coordinates so every
    iterate stays inside the open unit interval; estimates beyond ``bound``
    are clamped and flagged.
    """
    y = np.asarray(y, dtype=float)
    s = season_length
    if y.size <= 2 * s:
        raise ValueError(f"need more than two seasons ({2 * s} points), got {y.size}")
    w = seasonal_difference(y, s)

    def obj(z):
        p = np.tanh(z)
        return css(w, p[0], p[1], p[2], s)

    res = optimize.minimize(obj, np.arctanh(np.asarray(start, dtype=float)), method="Nelder-Mead",
                            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 2000})
    p = np.tanh(res.x)
    at_bounds = bool(np.any(np.abs(p) > bound))
    p = np.clip(p, -bound, bound)
    c = css(w, *p, s)
    return ArimaFit(float(p[0]), float(p[1]), float(p[2]), c / max(w.size - 1, 1), c, s, at_bounds)


def arima_fitted(fit: ArimaFit, y) -> np.ndarray:
    """One-step in-sample predictions ``y_t - e_t``; nan for the first season."""
    y = np.asarray(y, dtype=float)
    s = fit.season_length
    e = arima_residuals(seasonal_difference(y, s), fit.phi, fit.theta, fit.Theta, s)
    out = np.full(y.size, np.nan)
    out[s:] = y[s:] - e
    return out


def arima_forecast(fit: ArimaFit, y, horizon: int = 32) -> np.ndarray:
    """h-step forecasts: recurse on the differenced series, then add back y_{t+h-s}."""
    y = np.asarray(y, dtype=float)
    s = fit.season_length
    w = seasonal_difference(y, s)
    e = arima_residuals(w, fit.phi, fit.theta, fit.Theta, s)
    n_w = w.size
    w_ext = np.concatenate([w, np.zeros(horizon)])
    e_ext = np.concatenate([e, np.zeros(horizon)])  # future innovations have mean zero

    def past(arr, i):
        return arr[i] if i >= 0 else 0.0

    for h in range(horizon):
        t = n_w + h
        w_ext[t] = (fit.phi * past(w_ext, t - 1) + fit.theta * past(e_ext, t - 1)
                    + fit.Theta * past(e_ext, t - s) + fit.theta * fit.Theta * past(e_ext, t - s - 1))
    y_ext = np.concatenate([y, np.zeros(horizon)])
    for h in range(horizon):
        t = y.size + h
        y_ext[t] = w_ext[n_w + h] + y_ext[t - s]
    return y_ext[y.size:]


def simulate_arima(n: int, phi: float, theta: float, Theta: float, s: int = 160,
                   sigma: float = 1.0, seed: int = 0, burn: int | None = None) -> np.ndarray:
    """Draw a series from the seasonal ARIMA process (used as a recovery oracle)."""
    rng = np.random.default_rng(seed)
    burn = 4 * s if burn is None else burn
    e = sigma * rng.standard_normal(n + burn)
    w = signal.lfilter(_ma_poly(theta, Theta, s), [1.0, -phi], e)
    y = np.zeros(n + burn + s)
    for t in range(w.size):
        y[s + t] = y[t] + w[t]
    return y[-n:]


def seasonal_naive(y, season_length: int = 160, horizon: int = 32) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    idx = y.size - season_length + np.arange(horizon)
    return y[idx]

"""Reciprocal-WAPE regression with loglinear variance, PI-based selection, Wilcoxon tests."""

from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .features import CoverageError
from .harness import FACTOR_NAMES, ExperimentRun, _fmt
from .mixedmodel import estimable_columns
from .neural import MODEL_TYPES

BLOCKING = ("split", "file")


class UndefinedIntervalError(ValueError):
    """Lower bound of 1/WAPE is not positive, so the WAPE interval is unbounded."""


class SelectionError(ValueError):
    """No design row has a defined interval."""


def reciprocal_transform(w):
    w = np.asarray(w, dtype=float)
    if np.any(~(w > 0)):
        raise ValueError("WAPE must be > 0 for the reciprocal transform")
    return 1.0 / w


# -- dummy coding ----------------------------------------------------------------

def _level_key(factor: str, v):
    if factor == "model.type" and v in MODEL_TYPES:
        return (0, MODEL_TYPES.index(v), "")
    if isinstance(v, (bool, int, float, np.integer, np.floating)):
        return (1, float(v), "")
    return (2, 0.0, str(v))


@dataclass
class Coder:
    """Reference-level (first level dropped) dummy coding for categorical factors."""

    levels: dict  # factor -> ordered levels, first is the reference

    @classmethod
    def from_records(cls, records: list[dict], factors) -> "Coder":
        return cls({f: sorted({r[f] for r in records}, key=lambda v: _level_key(f, v)) for f in factors})

    def term_columns(self, term: tuple) -> list[tuple]:
        return list(itertools.product(*(self.levels[f][1:] for f in term)))

    def matrix(self, records: list[dict], terms: list[tuple]):
        """Intercept plus one column per non-reference level combination of each term."""
        n = len(records)
        cols, names, owner = [np.ones(n)], ["intercept"], [()]
        for term in terms:
            for combo in self.term_columns(term):
                col = np.ones(n)
                for f, lv in zip(term, combo):
                    col *= np.array([r[f] == lv for r in records], dtype=float)
                cols.append(col)
                names.append("*".join(f"{f}[{_fmt(lv)}]" for f, lv in zip(term, combo)))
                owner.append(term)
        return np.column_stack(cols), names, owner


def term_name(term: tuple) -> str:
    return "*".join(term) if term else "intercept"


def interaction_terms(factors) -> list[tuple]:
    """Every non-empty subset of ``factors``, main effects first."""
    return [t for k in range(1, len(factors) + 1) for t in itertools.combinations(factors, k)]


# -- loglinear variance regression -------------------------------------------------

@dataclass
class LoglinVarFit:
    mean_coefs: np.ndarray
    var_coefs: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    mean_cov: np.ndarray | None = None
    mean_names: list[str] = field(default_factory=list)
    var_names: list[str] = field(default_factory=list)
    mean_terms: list[tuple] = field(default_factory=list)
    var_terms: list[tuple] = field(default_factory=list)

    def mean(self, xm) -> np.ndarray:
        return np.asarray(xm, dtype=float) @ self.mean_coefs

    def sd(self, xv) -> np.ndarray:
        return np.exp(0.5 * (np.asarray(xv, dtype=float) @ self.var_coefs))


def _gauss_loglik(r, logv) -> float:
    return float(np.sum(-0.5 * np.log(2 * np.pi) - 0.5 * logv - 0.5 * r * r * np.exp(-logv)))


def fit_loglin_var(Xm, Xv, y, tol: float = 1e-8, max_iter: int = 200) -> LoglinVarFit:
    """Joint ML fit of ``y ~ N(Xm b, exp(Xv g))``.

    Alternates weighted least squares for ``b`` with Fisher-scoring steps for
    ``g`` (step-halved so the loglikelihood never drops) until the relative
    loglikelihood change falls below ``tol``.
    """
    Xm, Xv, y = (np.asarray(a, dtype=float) for a in (Xm, Xv, y))
    n = y.size
    if np.linalg.matrix_rank(Xm) < Xm.shape[1] or np.linalg.matrix_rank(Xv) < Xv.shape[1]:
        raise ValueError("mean and variance designs must have full column rank")
    b = np.linalg.lstsq(Xm, y, rcond=None)[0]
    r = y - Xm @ b
    s2 = max(float(r @ r) / n, 1e-300)
    g = np.linalg.lstsq(Xv, np.full(n, np.log(s2)), rcond=None)[0]
    XtX_v = Xv.T @ Xv
    ll = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = np.exp(-(Xv @ g))
        XtW = Xm.T * w
        b = np.linalg.solve(XtW @ Xm, XtW @ y)
        r = y - Xm @ b
        base = _gauss_loglik(r, Xv @ g)
        step = np.linalg.solve(XtX_v, Xv.T @ (r * r * w - 1.0))
        t = 1.0
        while True:
            g_new = g + t * step
            ll_new = _gauss_loglik(r, Xv @ g_new)
            if ll_new >= base or t < 1e-10:
                break
            t *= 0.5
        if ll_new >= base:
            g = g_new
        else:
            ll_new = base
        done = abs(ll_new - ll) <= tol * abs(ll_new)
        ll = ll_new
        if done:
            converged = True
            break
    w = np.exp(-(Xv @ g))
    XtW = Xm.T * w
    b = np.linalg.solve(XtW @ Xm, XtW @ y)
    cov = np.linalg.inv(XtW @ Xm)
    ll = _gauss_loglik(y - Xm @ b, Xv @ g)
    return LoglinVarFit(b, g, ll, converged, it, cov)


def lr_test_variance(full: LoglinVarFit, reduced: LoglinVarFit, df: int) -> tuple[float, float]:
    chi2 = 2.0 * (full.loglik - reduced.loglik)
    if chi2 < -1e-6:
        raise ArithmeticError(f"reduced fit beats the full fit by {-chi2:.3g}: optimization failure")
    chi2 = max(chi2, 0.0)
    return chi2, float(stats.chi2.sf(chi2, df)) if df > 0 else 1.0


def wald_test(fit: LoglinVarFit, cols: list[int]) -> tuple[float, float]:
    b = fit.mean_coefs[cols]
    V = fit.mean_cov[np.ix_(cols, cols)]
    chi2 = float(b @ np.linalg.solve(V, b))
    return chi2, float(stats.chi2.sf(chi2, len(cols)))


# -- prediction interval and selection ----------------------------------------------

def upper_pi(mu: float, sigma: float, level: float = 0.95) -> float:
    """Upper PI of WAPE from the mean and SD of 1/WAPE: ``1 / (mu - z sigma)``."""
    z = stats.norm.ppf(0.5 + level / 2.0)
    lo = mu - z * sigma
    if not lo > 0:
        raise UndefinedIntervalError(f"lower bound of 1/WAPE is {lo:.4g}")
    return 1.0 / lo


def wape_upper_pi(fit: LoglinVarFit, xm, xv, level: float = 0.95) -> float:
    return upper_pi(float(fit.mean(xm)), float(fit.sd(xv)), level)


@dataclass
class ConfigSelection:
    best_row: dict
    criterion: float
    table: list[dict]


def select_config(rows: list[dict], mu, sigma, level: float = 0.95) -> ConfigSelection:
    """Row minimizing the upper PI of WAPE; ties go to fewer nodes, then fewer layers."""
    table, best = [], None
    for row, m, s in zip(rows, mu, sigma):
        try:
            u = upper_pi(float(m), float(s), level)
        except UndefinedIntervalError:
            u = None
        table.append({**row, "mean_inv_wape": float(m), "sd_inv_wape": float(s), "upper_pi_wape": u})
        if u is not None:
            key = (u, row.get("nnodes", 0), row.get("nlayers", 0))
            if best is None or key < best[0]:
                best = (key, row)
    if best is None:
        raise SelectionError("every design row has an undefined interval")
    return ConfigSelection(dict(best[1]), best[0][0], table)


# -- Wilcoxon signed rank ------------------------------------------------------------

def wilcoxon_signed_rank(diffs, exact_max: int = 12) -> tuple[float, float]:
    """W+ and its two-sided p-value; exact zeros are dropped first.

    Uses average ranks for ties. For up to ``exact_max`` non-zero differences
    the null distribution is enumerated over all sign patterns; otherwise a
    normal approximation with tie and continuity corrections is used.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        warnings.warn("all differences are zero; returning p = 1", RuntimeWarning, stacklevel=2)
        return 0.0, 1.0
    ranks = stats.rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= exact_max:
        signs = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        null = signs @ ranks
        eps = 1e-9
        p = 2.0 * min(np.mean(null <= w + eps), np.mean(null >= w - eps))
        return w, float(min(1.0, p))
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    if var <= 0:
        return w, 1.0
    z = max(abs(w - mean) - 0.5, 0.0) / np.sqrt(var)
    return w, float(min(1.0, 2.0 * stats.norm.sf(z)))


def paired_comparison_report(cells: dict, a: str, b: str) -> dict:
    """Median of ``a - b`` WAPE over shared cells, Wilcoxon p and b's win rate.

    ``cells`` maps a cell key to ``{model: wape}``. Ties count half a win.
    """
    diffs = np.array([v[a] - v[b] for v in cells.values() if a in v and b in v], dtype=float)
    if diffs.size == 0:
        raise CoverageError(f"no cells scored for both {a} and {b}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        w, p = wilcoxon_signed_rank(diffs)
    wins = np.sum(diffs > 0) + 0.5 * np.sum(diffs == 0)
    return {"a": a, "b": b, "n": int(diffs.size), "median_diff": float(np.median(diffs)),
            "statistic": w, "p_value": p, "win_rate_b": float(wins / diffs.size)}


def paired_runs(runs: list[ExperimentRun], factor: str, a, b) -> dict:
    """Cells pairing runs that differ only in ``factor`` (levels ``a`` and ``b``)."""
    cells: dict = {}
    for r in runs:
        if r.status != "ok" or r.row[factor] not in (a, b):
            continue
        key = tuple(_fmt(r.row[f]) for f in FACTOR_NAMES if f != factor) + (r.split, r.file)
        cells.setdefault(key, {})[_fmt(r.row[factor])] = r.wape
    return cells


# -- full analysis of a runs table -------------------------------------------------

@dataclass
class RunAnalysis:
    full: LoglinVarFit
    pruned: LoglinVarFit
    variance_tests: list[dict]
    mean_tests: dict  # "full"/"pruned" -> rows
    selection: ConfigSelection
    excluded: int
    dropped_columns: list[str]
    coder: Coder


def _records(runs: list[ExperimentRun]) -> tuple[list[dict], np.ndarray, int]:
    recs, ys, excluded = [], [], 0
    for r in runs:
        if r.status != "ok":
            continue
        if not r.wape > 0:
            excluded += 1
            continue
        recs.append({**r.row, "split": r.split, "file": r.file})
        ys.append(1.0 / r.wape)
    return recs, np.array(ys), excluded


def _design(coder: Coder, recs, terms):
    X, names, owner = coder.matrix(recs, terms)
    keep = np.sort(estimable_columns(X))
    dropped = [names[i] for i in range(len(names)) if i not in set(keep.tolist())]
    return X[:, keep], [names[i] for i in keep], [owner[i] for i in keep], dropped


def _fit(coder, recs, y, mean_terms, var_terms):
    Xm, mn, mo, d1 = _design(coder, recs, mean_terms)
    Xv, vn, vo, d2 = _design(coder, recs, var_terms)
    if Xm.shape[1] + Xv.shape[1] >= len(y):
        # the variance model can then zero a residual and the likelihood is unbounded
        raise CoverageError(f"{len(y)} completed runs cannot support {Xm.shape[1]} mean and "
                            f"{Xv.shape[1]} variance parameters")
    fit = fit_loglin_var(Xm, Xv, y)
    fit.mean_names, fit.var_names = mn, vn
    fit.mean_terms, fit.var_terms = mo, vo
    return fit, d1 + d2


def _term_cols(owners, term):
    return [i for i, o in enumerate(owners) if o == term]


def _mean_tests(fit: LoglinVarFit, terms) -> list[dict]:
    rows = []
    for t in terms:
        cols = _term_cols(fit.mean_terms, t)
        if not cols:
            continue
        chi2, p = wald_test(fit, cols)
        rows.append({"source": term_name(t), "nparm": len(cols), "df": len(cols), "chi_square": chi2, "p": p})
    return rows


def analyze_runs(runs: list[ExperimentRun], level: float = 0.95, alpha: float = 0.05) -> RunAnalysis:
    """Full and pruned mean models, variance LR tests and upper-PI selection."""
    recs, y, excluded = _records(runs)
    if excluded:
        warnings.warn(f"excluded {excluded} run(s) with zero WAPE", RuntimeWarning, stacklevel=2)
    if len(recs) < 3:
        raise CoverageError("too few completed runs to analyze")
    coder = Coder.from_records(recs, FACTOR_NAMES + BLOCKING)
    varying = [f for f in FACTOR_NAMES if len(coder.levels[f]) > 1]
    blocks = [(f,) for f in BLOCKING if len(coder.levels[f]) > 1]
    if len(blocks) == 2:
        blocks.append(BLOCKING)
    exp_terms = interaction_terms(varying)
    mean_terms = exp_terms + blocks
    var_terms = [(f,) for f in varying + ["file", "split"] if len(coder.levels[f]) > 1]

    full, dropped = _fit(coder, recs, y, mean_terms, var_terms)
    var_tests = []
    for t in var_terms:
        cols = _term_cols(full.var_terms, t)
        if not cols:
            continue
        reduced, _ = _fit(coder, recs, y, mean_terms, [v for v in var_terms if v != t])
        chi2, p = lr_test_variance(full, reduced, len(cols))
        var_tests.append({"source": term_name(t), "test_type": "Likelihood", "df": len(cols),
                          "chi_square": chi2, "p": p})

    # backward elimination of interactions, keeping the hierarchy
    kept = list(mean_terms)
    pruned = full
    while True:
        tests = {r["source"]: r["p"] for r in _mean_tests(pruned, kept)}
        cands = [t for t in kept if len(t) > 1 and t != BLOCKING
                 and not any(set(t) < set(o) for o in kept)
                 and tests.get(term_name(t), 0.0) > alpha]
        if not cands:
            break
        worst = max(cands, key=lambda t: (tests[term_name(t)], term_name(t)))
        kept.remove(worst)
        pruned, _ = _fit(coder, recs, y, kept, var_terms)

    grid_rows = [dict(zip(FACTOR_NAMES, combo))
                 for combo in itertools.product(*(coder.levels[f] for f in FACTOR_NAMES))]
    ref = {f: coder.levels[f][0] for f in BLOCKING}
    prof = [{**r, **ref} for r in grid_rows]
    Xm, _, _ = coder.matrix(prof, kept)
    Xv, _, _ = coder.matrix(prof, var_terms)
    Xm = Xm[:, _select(coder, kept, pruned.mean_names)]
    Xv = Xv[:, _select(coder, var_terms, pruned.var_names)]
    sel = select_config(grid_rows, pruned.mean(Xm), pruned.sd(Xv), level)
    return RunAnalysis(full, pruned, var_tests,
                       {"full": _mean_tests(full, mean_terms), "pruned": _mean_tests(pruned, kept)},
                       sel, excluded, dropped, coder)


def _select(coder: Coder, terms, names) -> list[int]:
    _, all_names, _ = coder.matrix([{f: lv[0] for f, lv in coder.levels.items()}], terms)
    idx = {n: i for i, n in enumerate(all_names)}
    return [idx[n] for n in names]


def histogram_rows(values, bins: int = 20) -> list[tuple[float, float, int]]:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    return "" if v is None else f"{v:.10g}"


def write_report(result: RunAnalysis, runs: list[ExperimentRun], out_dir) -> list[str]:
    """Write the CSV/JSON report files; returns their names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "variance_tests.csv", ["source", "test_type", "df", "chi_square", "p"],
               [[r["source"], r["test_type"], r["df"], _num(r["chi_square"]), _num(r["p"])]
                for r in result.variance_tests])
    _write_csv(out / "mean_tests.csv", ["fit", "source", "nparm", "df", "chi_square", "p"],
               [[which, r["source"], r["nparm"], r["df"], _num(r["chi_square"]), _num(r["p"])]
                for which in ("full", "pruned") for r in result.mean_tests[which]])
    _write_csv(out / "profile.csv", list(FACTOR_NAMES) + ["mean_inv_wape", "sd_inv_wape", "upper_pi_wape"],
               [[_fmt(r[f]) for f in FACTOR_NAMES] + [_num(r["mean_inv_wape"]), _num(r["sd_inv_wape"]),
                                                     _num(r["upper_pi_wape"])]
                for r in result.selection.table])
    sel = {
        "best_row": {f: _fmt(result.selection.best_row[f]) for f in FACTOR_NAMES},
        "upper_pi_wape": result.selection.criterion,
        "excluded_zero_wape": result.excluded,
        "pruned_mean_terms": sorted({term_name(t) for t in result.pruned.mean_terms if t}),
        "converged": {"full": result.full.converged, "pruned": result.pruned.converged},
    }
    (out / "selection.json").write_text(json.dumps(sel, indent=2, sort_keys=True) + "\n")
    w = np.array([r.wape for r in runs if r.status == "ok" and r.wape > 0])
    _write_csv(out / "histogram_wape.csv", ["bin_lo", "bin_hi", "count"],
               [[_num(a), _num(b), c] for a, b, c in histogram_rows(w)])
    _write_csv(out / "histogram_inv_wape.csv", ["bin_lo", "bin_hi", "count"],
               [[_num(a), _num(b), c] for a, b, c in histogram_rows(1.0 / w)])
    return ["variance_tests.csv", "mean_tests.csv", "profile.csv", "selection.json",
            "histogram_wape.csv", "histogram_inv_wape.csv"]

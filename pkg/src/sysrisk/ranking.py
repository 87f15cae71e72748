"""Tournament ranking of systemic-risk measures.

Two criteria are scored per bank and summed over banks:

* fit to an influential-event variable (logit or multinomial logit of the
  event series on the lagged measure, compared by McFadden R-squared);
* pairwise Granger causality between measures on first differences.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .corisk import RiskSeries
from .errors import DegenerateResponseError, SampleSizeError, SysRiskError
from .ingest import EventTimeline

__all__ = [
    "IEVSeries",
    "BinaryFit",
    "TrinaryFit",
    "GrangerResult",
    "ScoreBoard",
    "build_iev",
    "fit_logit",
    "fit_mlogit",
    "mcfadden_r2",
    "granger_test",
    "score_measures",
    "MEASURE_ORDER",
    "MEASURE_LABELS",
]

SLOPE_CAP = 30.0
GRAD_TOL = 1e-8
MAX_NEWTON = 200
TIE_TOL = 1e-10
GRANGER_LAGS = 2
ALPHA = 0.05

MEASURE_ORDER = ("NSV", "GSV", "dCoVaR", "dCoES", "adCoVaR")
MEASURE_LABELS = {
    "NSV": "Net Shapley Value",
    "GSV": "Gross Shapley Value",
    "dCoVaR": "Delta co-value-at-risk",
    "dCoES": "Delta co-expected-shortfall",
    "adCoVaR": "Asymmetric Delta co-value-at-risk",
    "VaR": "Value-at-risk",
}


# --------------------------------------------------------------------- events

@dataclass(frozen=True)
class IEVSeries:
    dates: np.ndarray
    values: np.ndarray
    include_actions: bool = True

    def __post_init__(self):
        allowed = {-1, 0, 1} if self.include_actions else {0, 1}
        if not set(np.unique(self.values).tolist()) <= allowed:
            raise ValueError("event variable holds values outside its allowed set")


def _week_id(dates) -> np.ndarray:
    # Monday-based week number; 1970-01-01 was a Thursday
    days = np.asarray(dates, dtype="datetime64[D]").astype(np.int64)
    return (days + 3) // 7


def build_iev(events: EventTimeline, dates, include_actions: bool = True) -> IEVSeries:
    """Weekly event variable: +1 event week, -1 policy-action week, else 0.

    An entry marks the observation whose calendar (ISO) week contains it.
    Events win over actions in the same week; without ``include_actions``
    actions are ignored.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    weeks = _week_id(dates)
    pos = {int(w): i for i, w in enumerate(weeks)}
    values = np.zeros(dates.size, dtype=np.int8)
    for when, kind in events.entries:
        i = pos.get(int(_week_id(when)))
        if i is None:
            continue
        if kind == "event":
            values[i] = 1
        elif include_actions and values[i] == 0:
            values[i] = -1
    return IEVSeries(dates, values, include_actions)


# -------------------------------------------------------------- choice models

@dataclass(frozen=True)
class _ChoiceFit:
    """Maximum-likelihood fit of a categorical response on ``(1, x)``.

    ``coefficients`` has one ``(intercept, slope)`` row per non-baseline
    class in ``classes[1:]``, in the units of the original ``x``.
    """

    classes: tuple[int, ...]
    coefficients: np.ndarray
    loglik: float
    loglik_null: float
    converged: bool
    separated: bool = False
    n_iter: int = 0
    n_obs: int = 0


class BinaryFit(_ChoiceFit):
    pass


class TrinaryFit(_ChoiceFit):
    pass


def _loglik(theta: np.ndarray, Z: np.ndarray, Y: np.ndarray):
    """Log-likelihood, gradient and Hessian of the baseline-category logit.

    ``theta`` stacks (intercept, slope) per non-baseline class; ``Y`` is the
    one-hot indicator of those classes (baseline rows are all zero).
    """
    K = Y.shape[1]
    B = theta.reshape(K, 2)
    eta = Z @ B.T  # n x K
    top = np.maximum(eta.max(axis=1), 0.0)
    ex = np.exp(eta - top[:, None])
    den = np.exp(-top) + ex.sum(axis=1)
    P = ex / den[:, None]
    ll = float(np.sum(Y * eta) - np.sum(top + np.log(den)))
    R = Y - P
    grad = (R.T @ Z).ravel()
    H = np.zeros((2 * K, 2 * K))
    for a in range(K):
        for b in range(K):
            w = P[:, a] * ((a == b) - P[:, b])
            H[2 * a:2 * a + 2, 2 * b:2 * b + 2] = -(Z * w[:, None]).T @ Z
    return ll, grad, H


def _newton(Z, Y, cap=SLOPE_CAP, tol=GRAD_TOL, max_iter=MAX_NEWTON):
    """Projected Newton ascent with slopes boxed to ``[-cap, cap]``."""
    K = Y.shape[1]
    theta = np.zeros(2 * K)
    # start intercepts at the null model
    n = Y.shape[0]
    base = n - Y.sum()
    theta[0::2] = np.log(Y.sum(axis=0) / base)
    slope = np.zeros(2 * K, dtype=bool)
    slope[1::2] = True
    ll, g, H = _loglik(theta, Z, Y)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        at_bound = slope & (np.abs(theta) >= cap) & (np.sign(g) == np.sign(theta))
        free = ~at_bound
        pg = np.where(free, g, 0.0)
        if np.max(np.abs(pg)) < tol:
            converged = True
            break
        Hf = H[np.ix_(free, free)]
        try:
            step_f = np.linalg.solve(-Hf, g[free])
        except np.linalg.LinAlgError:
            step_f = g[free]
        step = np.zeros_like(theta)
        step[free] = step_f
        # full step projected onto the box, then backtrack
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            cand[slope] = np.clip(cand[slope], -cap, cap)
            ll_c, g_c, H_c = _loglik(cand, Z, Y)
            if ll_c >= ll - 1e-12:
                break
            t *= 0.5
        else:
            converged = bool(np.max(np.abs(pg)) < 1e-6)
            break
        theta, ll, g, H = cand, ll_c, g_c, H_c
    separated = bool(np.any(np.abs(theta[slope]) >= cap * (1 - 1e-12)))
    return theta, ll, converged, separated, it


def _null_loglik(Y: np.ndarray) -> float:
    n = Y.shape[0]
    counts = np.append(Y.sum(axis=0), n - Y.sum())
    counts = counts[counts > 0]
    return float(np.sum(counts * np.log(counts / n)))


def _fit_choice(y, x, cls, cap):
    y = np.asarray(y)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise ValueError("response and regressor differ in length")
    if not np.all(np.isfinite(x)):
        raise ValueError("regressor contains non-finite values")
    classes = tuple(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise DegenerateResponseError(f"response has a single class {classes}")
    if 0 not in classes:
        raise DegenerateResponseError("baseline class 0 is absent")
    others = [c for c in classes if c != 0]
    Y = np.column_stack([(y == c).astype(float) for c in others])
    mu, sd = float(x.mean()), float(x.std())
    z = (x - mu) / sd if sd > 0 else np.zeros_like(x)
    Z = np.column_stack([np.ones_like(z), z])
    if sd > 0:
        theta, ll, conv, sep, it = _newton(Z, Y, cap)
    else:
        # no variation: the slope is unidentified and set to zero
        theta = np.zeros(2 * len(others))
        theta[0::2] = np.log(Y.sum(axis=0) / (Y.shape[0] - Y.sum()))
        ll, conv, sep, it = _loglik(theta, Z, Y)[0], True, False, 0
    B = theta.reshape(-1, 2).copy()
    if sd > 0:
        B[:, 1] = B[:, 1] / sd
        B[:, 0] = B[:, 0] - B[:, 1] * mu
    ll0 = _null_loglik(Y)
    return cls((0, *others), B, ll, ll0, conv, sep, it, y.size)


def fit_logit(y, x, cap: float = SLOPE_CAP) -> BinaryFit:
    """Logistic regression of a 0/1 response on ``(1, x)``.

    Under (quasi-)complete separation the standardized slope is capped at
    ``cap`` in absolute value and ``separated`` is set.
    """
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("binary response must be coded 0/1")
    return _fit_choice(y, x, BinaryFit, cap)


def fit_mlogit(y, x, cap: float = SLOPE_CAP) -> TrinaryFit:
    """Multinomial logit of a {-1, 0, 1} response with baseline class 0."""
    y = np.asarray(y)
    if not np.isin(y, (-1, 0, 1)).all():
        raise ValueError("trinary response must be coded -1/0/1")
    return _fit_choice(y, x, TrinaryFit, cap)


def mcfadden_r2(fit: _ChoiceFit) -> float:
    """1 - lnL(full) / lnL(intercept only)."""
    if fit.loglik_null == 0.0:
        raise DegenerateResponseError("intercept-only log-likelihood is zero")
    return max(0.0, 1.0 - fit.loglik / fit.loglik_null)


# -------------------------------------------------------------------- Granger

@dataclass(frozen=True)
class GrangerResult:
    F: float
    p_value: float
    causes: bool
    lags: int
    n_obs: int
    collinear: bool = False


def granger_test(x, y, p: int = GRANGER_LAGS, alpha: float = ALPHA) -> GrangerResult:
    """Does ``x`` Granger-cause ``y``?

    Both series are first-differenced; dY is regressed on a constant, p own
    lags and p lags of dX, and the dX block is F-tested.  A rank-deficient
    design is returned flagged with ``causes=False``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d series of equal length")
    if p < 1:
        raise ValueError("lag order must be at least 1")
    if x.size <= 4 * p + 10:
        raise SampleSizeError(f"{x.size} observations, more than {4 * p + 10} required")
    dx, dy = np.diff(x), np.diff(y)
    rows = np.arange(p, dx.size)
    own = np.column_stack([dy[rows - i] for i in range(1, p + 1)])
    cross = np.column_stack([dx[rows - i] for i in range(1, p + 1)])
    const = np.ones((rows.size, 1))
    target = dy[rows]
    full = np.hstack([const, own, cross])
    restricted = np.hstack([const, own])
    df = rows.size - full.shape[1]

    def rss(D):
        coef, _, rank, _ = np.linalg.lstsq(D, target, rcond=None)
        r = target - D @ coef
        return float(r @ r), rank

    rss_u, rank = rss(full)
    rss_r, _ = rss(restricted)
    if rank < full.shape[1] or rss_u <= 1e-14 * max(rss_r, 1e-300):
        return GrangerResult(np.nan, np.nan, False, p, rows.size, collinear=True)
    F = ((rss_r - rss_u) / p) / (rss_u / df)
    pval = float(stats.f.sf(F, p, df))
    return GrangerResult(float(F), pval, pval < alpha, p, rows.size)


# ---------------------------------------------------------------- scoreboard

@dataclass
class ScoreBoard:
    measures: tuple[str, ...]
    mcfadden: np.ndarray
    granger: np.ndarray
    average_r2: np.ndarray
    n_banks: int = 0
    per_bank: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.mcfadden + self.granger

    def score(self, measure: str) -> dict:
        j = self.measures.index(measure)
        return {"mcfadden": int(self.mcfadden[j]), "granger": int(self.granger[j]),
                "total": int(self.total[j]), "average_r2": float(self.average_r2[j])}

    def rows(self) -> list[list[str]]:
        head = [""] + [MEASURE_LABELS.get(m, m) for m in self.measures]
        fmt_i = lambda v: [str(int(a)) for a in v]
        r2 = ["nan" if np.isnan(a) else f"{a:.4f}" for a in self.average_r2]
        return [
            head,
            ["McFadden R-squared"] + fmt_i(self.mcfadden),
            ["Granger causality test"] + fmt_i(self.granger),
            ["Total"] + fmt_i(self.total),
            ["Average McFadden R-squared"] + r2,
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())


def _aligned(series: Mapping[str, RiskSeries], iev: IEVSeries | None):
    common = None
    for s in series.values():
        d = np.asarray(s.dates)
        common = d if common is None else np.intersect1d(common, d)
    if iev is not None:
        common = np.intersect1d(common, np.asarray(iev.dates))
    out = {}
    for k, s in series.items():
        idx = np.searchsorted(np.asarray(s.dates), common)
        out[k] = np.asarray(s.values, dtype=float)[idx]
    ev = None
    if iev is not None:
        ev = np.asarray(iev.values)[np.searchsorted(np.asarray(iev.dates), common)]
    return common, out, ev


def _event_r2(ev, x, lags, include_actions, reduce):
    vals = []
    fit = fit_mlogit if include_actions else fit_logit
    for k in lags:
        yk = ev[k:]
        xk = x[:x.size - k] if k else x
        vals.append(mcfadden_r2(fit(yk, xk)))
    if reduce == "max":
        return max(vals)
    if reduce == "mean":
        return float(np.mean(vals))
    if reduce == "first":
        return vals[0]
    raise ValueError(f"unknown lag reduction {reduce!r}")


def score_measures(measures: Mapping[str, Mapping[str, RiskSeries]], iev: IEVSeries | None,
                   lags: Sequence[int] = (0, 1, 2), criterion: str = "both",
                   order: Sequence[str] | None = None, lag_reduce: str = "max",
                   granger_lags: int = GRANGER_LAGS) -> ScoreBoard:
    """Score measures per bank and sum over banks.

    ``measures`` maps bank id -> {measure kind -> RiskSeries}.  With
    ``criterion`` in {"mcfadden", "granger", "both"}.  A bank-measure fit
    that fails scores 0 in every pair it belongs to.
    """
    if criterion not in ("mcfadden", "granger", "both"):
        raise ValueError(f"unknown criterion {criterion!r}")
    if order is None:
        kinds = {k for per in measures.values() for k in per}
        order = [m for m in MEASURE_ORDER if m in kinds] + sorted(kinds - set(MEASURE_ORDER))
    order = tuple(order)
    M = len(order)
    if M < 2:
        raise ValueError("need at least two measures to rank")
    do_mcf = criterion in ("mcfadden", "both")
    do_gr = criterion in ("granger", "both")
    if do_mcf and iev is None:
        raise ValueError("the McFadden criterion needs an event variable")
    mcf = np.zeros(M, dtype=np.int64)
    gr = np.zeros(M, dtype=np.int64)
    r2_sum = np.zeros(M)
    r2_n = np.zeros(M, dtype=np.int64)
    per_bank = {}
    for bank in sorted(measures):
        series = {m: measures[bank][m] for m in order}
        _, vals, ev = _aligned(series, iev if do_mcf else None)
        b_mcf = np.zeros(M, dtype=np.int64)
        b_gr = np.zeros(M, dtype=np.int64)
        r2 = np.full(M, np.nan)
        if do_mcf:
            for j, m in enumerate(order):
                try:
                    r2[j] = _event_r2(ev, vals[m], lags, iev.include_actions, lag_reduce)
                except SysRiskError:
                    pass
            for a, b in itertools.combinations(range(M), 2):
                if np.isnan(r2[a]) or np.isnan(r2[b]) or abs(r2[a] - r2[b]) <= TIE_TOL:
                    continue
                win, lose = (a, b) if r2[a] > r2[b] else (b, a)
                b_mcf[win] += 1
                b_mcf[lose] -= 1
            ok = ~np.isnan(r2)
            r2_sum[ok] += r2[ok]
            r2_n[ok] += 1
        if do_gr:
            for a, b in itertools.combinations(range(M), 2):
                xa, xb = vals[order[a]], vals[order[b]]
                try:
                    ab = granger_test(xa, xb, granger_lags).causes
                    ba = granger_test(xb, xa, granger_lags).causes
                except SysRiskError:
                    continue
                d = int(ab) - int(ba)
                b_gr[a] += d
                b_gr[b] -= d
        mcf += b_mcf
        gr += b_gr
        per_bank[bank] = {"mcfadden": b_mcf, "granger": b_gr, "r2": r2}
    with np.errstate(invalid="ignore"):
        avg = np.where(r2_n > 0, r2_sum / np.maximum(r2_n, 1), np.nan)
    return ScoreBoard(order, mcf, gr, avg, len(per_bank), per_bank)

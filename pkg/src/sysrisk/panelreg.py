"""Panel regressions of bank-level systemic risk on lagged characteristics.

Contents: Prais-Winsten estimation with panel-corrected standard errors
(Beck-Katz), economic impacts, a two-date difference-in-differences design
and a predictive-regression endogeneity check with a correction term.

Panels in wide form are ``(Q, N)`` arrays (quarters x banks) with NaN for
missing cells; estimation works on a long :class:`PanelData`.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import SampleSizeError, SingularDesignError
from .ingest import DERIVATIVE_FIELDS, QuarterPanel

__all__ = [
    "PanelSpec",
    "PanelData",
    "RegressionResult",
    "EndogeneityResult",
    "aggregate_systemic",
    "aggregate_matrix",
    "assemble_panel",
    "pooled_ols",
    "prais_winsten_pcse",
    "economic_impact",
    "impacts",
    "f_test",
    "wald_test",
    "diff_in_diff",
    "adjusted_risk",
    "correction_term",
    "endogeneity_chain",
    "SIZE_CONNECT_SUBST",
    "BALANCE_SHEET",
    "LABELS",
]

SIZE_CONNECT_SUBST = (
    "log_market_value",
    "log_market_value_sq",
    "commercial_paper",
    "loan_to_banks",
    "total_loans",
    "non_interest_to_interest_income",
    "sp500_correlation",
    "net_balance_bank",
    "net_balance_nonbank",
)
BALANCE_SHEET = ("leverage", "maturity_mismatch", "total_deposits", "npl_ratio")
AGGREGATE = "aggregate_sr"
RHO_CLAMP = 0.99
MIN_COMMON = 8

LABELS = {
    "log_market_value": "Log market value t-1",
    "log_market_value_sq": "Log of squared market value t-1",
    "commercial_paper": "Commercial paper t-1 /TA",
    "loan_to_banks": "Loan to banks t-1 /TA",
    "total_loans": "Total loans t-1 /TA",
    "non_interest_to_interest_income": "Non-interest to interest income t-1",
    "sp500_correlation": "Correlation with S&P500 t-1",
    "net_balance_bank": "Net balance to bank t-1 /TA",
    "net_balance_nonbank": "Net balance to non-bank t-1 /TA",
    "leverage": "Leverage t-1",
    "maturity_mismatch": "Maturity mismatch t-1",
    "total_deposits": "Total deposits t-1 /TA",
    "npl_ratio": "Non-performing loans t-1 /Total loans",
    "aggregate_sr_l1": "Aggregate systemic risk measure t-1",
    "aggregate_sr_l2": "Aggregate systemic risk measure t-2",
    "credit_derivatives": "Credit derivatives t-1 /TA",
    "interest_rate_derivatives": "Interest rate derivatives t-1 /TA",
    "fx_derivatives": "Foreign exchange derivatives t-1 /TA",
    "equity_derivatives": "Equity derivatives t-1 /TA",
    "commodity_derivatives": "Commodity derivatives t-1 /TA",
    "const": "Constant",
    "post": "Post-shock dummy",
    "top": "Top-quartile",
    "post_x_top": "Post-shock x Top-quartile",
}


# ----------------------------------------------------------------- specs/data

@dataclass(frozen=True)
class PanelSpec:
    """Regressor layout of the determinants equation.

    Firm variables enter with lag ``lag``; the aggregate measure with each
    lag in ``aggregate_lags``.  Groups: ``y_vars`` (size, interconnectedness,
    substitutability), ``z_vars`` (balance sheet; the aggregate terms are
    appended to this group) and ``x_vars`` (derivative holdings).
    """

    dependent: str = "NSV"
    y_vars: tuple[str, ...] = SIZE_CONNECT_SUBST
    z_vars: tuple[str, ...] = BALANCE_SHEET
    x_vars: tuple[str, ...] = DERIVATIVE_FIELDS
    aggregate_lags: tuple[int, ...] = (1, 2)
    lag: int = 1
    constant: bool = True

    def __post_init__(self):
        names = self.firm_vars
        if len(set(names)) != len(names):
            raise ValueError("a regressor appears twice in the panel specification")
        if self.lag < 1 or any(k < 1 for k in self.aggregate_lags):
            raise ValueError("regressors must be lagged at least one period")
        if len(set(self.aggregate_lags)) != len(self.aggregate_lags):
            raise ValueError("duplicate aggregate lag")

    @property
    def firm_vars(self) -> tuple[str, ...]:
        return self.y_vars + self.z_vars + self.x_vars

    @property
    def names(self) -> tuple[str, ...]:
        agg = tuple(f"{AGGREGATE}_l{k}" for k in self.aggregate_lags)
        return (self.y_vars + self.z_vars + agg + self.x_vars
                + (("const",) if self.constant else ()))

    @property
    def max_lag(self) -> int:
        return max((self.lag,) + tuple(self.aggregate_lags))

    def without_derivatives(self) -> "PanelSpec":
        return replace(self, x_vars=())


@dataclass(frozen=True)
class PanelData:
    """Long panel: rows sorted by group, then period."""

    groups: np.ndarray  # (n,) group labels
    periods: np.ndarray  # (n,) integer period index
    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    period_labels: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.y.shape[0]
        if self.X.shape != (n, len(self.names)) or self.groups.shape != (n,) or self.periods.shape != (n,):
            raise ValueError("panel arrays do not line up")

    @property
    def n_obs(self) -> int:
        return self.y.size

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def drop(self, names: Sequence[str]) -> "PanelData":
        keep = [j for j, n in enumerate(self.names) if n not in set(names)]
        return replace(self, X=self.X[:, keep], names=tuple(self.names[j] for j in keep))


def _stack(measures) -> tuple[list[str], np.ndarray]:
    ids = list(measures)
    cols = []
    for b in ids:
        v = measures[b]
        cols.append(np.asarray(getattr(v, "values", v), dtype=float))
    return ids, np.column_stack(cols)


def aggregate_systemic(measures: Mapping[str, np.ndarray], exclude: str) -> np.ndarray:
    """Per-period sum of every bank's measure except ``exclude``.

    Missing cells are skipped; a period with no other bank observed is NaN.
    """
    if len(measures) < 2:
        raise ValueError("aggregate risk needs at least two banks")
    if exclude not in measures:
        raise KeyError(exclude)
    ids, M = _stack(measures)
    j = ids.index(exclude)
    others = np.delete(M, j, axis=1)
    total = np.zeros(M.shape[0])
    seen = np.zeros(M.shape[0], dtype=bool)
    for k in range(others.shape[1]):  # fixed order for reproducible sums
        v = others[:, k]
        ok = np.isfinite(v)
        total[ok] += v[ok]
        seen |= ok
    return np.where(seen, total, np.nan)


def aggregate_matrix(sr: np.ndarray, bank_ids: Sequence[str]) -> np.ndarray:
    """Column j holds :func:`aggregate_systemic` excluding bank j."""
    measures = {b: sr[:, j] for j, b in enumerate(bank_ids)}
    return np.column_stack([aggregate_systemic(measures, b) for b in bank_ids])


def assemble_panel(sr: np.ndarray, quarters: QuarterPanel, spec: PanelSpec = PanelSpec()) -> PanelData:
    """Long panel of ``sr[t]`` on lagged firm variables and aggregate risk.

    ``sr`` is ``(Q, N)`` aligned with ``quarters``.  Rows with any missing
    value are dropped.
    """
    sr = np.asarray(sr, dtype=float)
    Q, N = len(quarters.quarters), len(quarters.bank_ids)
    if sr.shape != (Q, N):
        raise ValueError(f"risk panel has shape {sr.shape}, expected {(Q, N)}")
    agg = aggregate_matrix(sr, quarters.bank_ids)
    firm = [quarters.get(v) for v in spec.y_vars + spec.z_vars]
    deriv = [quarters.get(v) for v in spec.x_vars]
    rows_g, rows_t, rows_y, rows_x = [], [], [], []
    for j, b in enumerate(quarters.bank_ids):
        for t in range(spec.max_lag, Q):
            x = [f[t - spec.lag, j] for f in firm]
            x += [agg[t - k, j] for k in spec.aggregate_lags]
            x += [f[t - spec.lag, j] for f in deriv]
            if spec.constant:
                x.append(1.0)
            if not (np.isfinite(sr[t, j]) and np.all(np.isfinite(x))):
                continue
            rows_g.append(b)
            rows_t.append(t)
            rows_y.append(sr[t, j])
            rows_x.append(x)
    if not rows_y:
        raise SampleSizeError("no complete panel rows")
    return PanelData(np.array(rows_g), np.array(rows_t, dtype=np.int64), np.array(rows_y),
                     np.array(rows_x, dtype=float), spec.names, tuple(quarters.quarters))


# -------------------------------------------------------------------- results

@dataclass
class RegressionResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    rho: float
    r_squared: float
    n_obs: int
    n_groups: int
    group_counts: dict
    method: str
    df_resid: int
    dist: str = "normal"  # reference distribution of t-ratios
    # transformed-stage data kept for restricted refits
    _Xt: np.ndarray | None = field(default=None, repr=False)
    _yt: np.ndarray | None = field(default=None, repr=False)

    @property
    def min_obs(self) -> int:
        return min(self.group_counts.values())

    @property
    def avg_obs(self) -> float:
        return self.n_obs / self.n_groups

    @property
    def max_obs(self) -> int:
        return max(self.group_counts.values())

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def stderr(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    @property
    def t_stats(self) -> np.ndarray:
        return self.coef / self.se

    @property
    def p_values(self) -> np.ndarray:
        t = np.abs(self.t_stats)
        if self.dist == "t":
            return 2 * stats.t.sf(t, self.df_resid)
        return 2 * stats.norm.sf(t)

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])

    def rows(self, impacts: Mapping[str, float] | None = None,
             labels: Mapping[str, str] = LABELS) -> list[list[str]]:
        """Table rows: coefficient and [SE] row pairs, then a count footer."""
        impacts = impacts or {}
        out = [["", "Coefficient [SE]", "Economic Impact (%)"]]
        for k, name in enumerate(self.names):
            imp = impacts.get(name)
            out.append([labels.get(name, name), f"{self.coef[k]:.3f}",
                        "" if imp is None else f"{imp:.3f}"])
            out.append(["", f"[{self.se[k]:.3f}]", ""])
        out += [
            ["Number of Observations", str(self.n_obs), ""],
            ["Number of Groups", str(self.n_groups), ""],
            ["Min. Observations per Group", str(self.min_obs), ""],
            ["Avg. Observations per Group", f"{self.avg_obs:.2f}", ""],
            ["Max. Observations per Group", str(self.max_obs), ""],
            ["R-squared", f"{self.r_squared:.3f}", ""],
            ["rho", f"{self.rho:.4f}", ""],
        ]
        return out

    def to_csv(self, path, impacts=None, labels=LABELS) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows(impacts, labels))

    def summary(self, labels: Mapping[str, str] = LABELS) -> str:
        """Human-readable table with significance stars (*** 1%, ** 5%)."""
        lines = [f"{self.method}  n={self.n_obs}  groups={self.n_groups}  "
                 f"R2={self.r_squared:.3f}  rho={self.rho:.3f}"]
        for k, name in enumerate(self.names):
            p = self.p_values[k]
            star = "***" if p < 0.01 else "**" if p < 0.05 else ""
            lines.append(f"{labels.get(name, name):<42s}{self.coef[k]:>12.4f}{star:<3s} [{self.se[k]:.4f}]")
        return "\n".join(lines)


def _check_rank(X: np.ndarray, names) -> None:
    if X.shape[0] < X.shape[1]:
        raise SingularDesignError(f"{X.shape[0]} rows for {X.shape[1]} regressors")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        # name a column that is a combination of the others
        for j in range(X.shape[1]):
            if np.linalg.matrix_rank(np.delete(X, j, axis=1)) == rank:
                raise SingularDesignError(f"design is rank deficient (column {names[j]!r})")
        raise SingularDesignError("design is rank deficient")


def _ols(y, X):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, y - X @ coef


def _r2(y, resid, constant: bool) -> float:
    tss = float(np.sum((y - y.mean()) ** 2)) if constant else float(y @ y)
    if tss == 0.0:
        return 1.0 if float(resid @ resid) == 0.0 else 0.0
    return 1.0 - float(resid @ resid) / tss


def _group_counts(groups) -> dict:
    labels, counts = np.unique(groups, return_counts=True)
    return {str(g): int(c) for g, c in zip(labels, counts)}


def pooled_ols(data: PanelData, robust: str | None = None) -> RegressionResult:
    """OLS on the stacked panel; ``robust='hc1'`` for White standard errors."""
    X, y = data.X, data.y
    _check_rank(X, data.names)
    coef, resid = _ols(y, X)
    n, k = X.shape
    XtX_inv = np.linalg.inv(X.T @ X)
    if robust == "hc1":
        meat = (X * resid[:, None] ** 2).T @ X
        V = XtX_inv @ meat @ XtX_inv * n / max(n - k, 1)
    elif robust is None:
        V = XtX_inv * float(resid @ resid) / max(n - k, 1)
    else:
        raise ValueError(f"unknown robust option {robust!r}")
    return RegressionResult(
        data.names, coef, np.sqrt(np.diag(V)), V, 0.0,
        _r2(y, resid, "const" in data.names), n, len(set(data.groups.tolist())),
        _group_counts(data.groups), "OLS" + (" (HC1)" if robust else ""), n - k, "t", X, y)


# ------------------------------------------------------------ Prais-Winsten

def _runs(groups, periods):
    """Boolean mask of rows that continue the previous row's run."""
    cont = np.zeros(groups.size, dtype=bool)
    cont[1:] = (groups[1:] == groups[:-1]) & (periods[1:] == periods[:-1] + 1)
    return cont


def _sort(data: PanelData) -> PanelData:
    order = np.lexsort((data.periods, data.groups))
    if np.array_equal(order, np.arange(order.size)):
        return data
    return replace(data, groups=data.groups[order], periods=data.periods[order],
                   y=data.y[order], X=data.X[order])


def _estimate_rho(e, groups, cont, panel_rho):
    lag = np.r_[np.nan, e[:-1]]
    if not panel_rho:
        num = float(np.sum(e[cont] * lag[cont]))
        den = float(np.sum(lag[cont] ** 2))
        return np.full(e.size, num / den if den > 0 else 0.0)
    out = np.zeros(e.size)
    for g in np.unique(groups):
        m = (groups == g) & cont
        den = float(np.sum(lag[m] ** 2))
        out[groups == g] = float(np.sum(e[m] * lag[m])) / den if den > 0 else 0.0
    return out


def _pw_transform(Z, rho_row, cont):
    """Prais-Winsten: scale run starts by sqrt(1-rho^2), quasi-difference the rest."""
    Z = np.asarray(Z, dtype=float)
    out = np.empty_like(Z)
    lagged = np.empty_like(Z)
    lagged[0] = 0.0
    lagged[1:] = Z[:-1]
    r = rho_row.reshape((-1,) + (1,) * (Z.ndim - 1))
    out[:] = Z - r * lagged
    start = ~cont
    out[start] = Z[start] * np.sqrt(1.0 - rho_row[start] ** 2).reshape((-1,) + (1,) * (Z.ndim - 1))
    return out


def _pcse(Xt, u, groups, periods, min_common=MIN_COMMON):
    """Beck-Katz sandwich with a cross-panel residual covariance."""
    g_labels, g_idx = np.unique(groups, return_inverse=True)
    p_labels, p_idx = np.unique(periods, return_inverse=True)
    G, P = g_labels.size, p_labels.size
    U = np.full((P, G), np.nan)
    U[p_idx, g_idx] = u
    obs = np.isfinite(U)
    U0 = np.where(obs, U, 0.0)
    common = obs.T.astype(float) @ obs.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        S = (U0.T @ U0) / common
    off = ~np.eye(G, dtype=bool)
    S[off & (common < min_common)] = 0.0
    S[~np.isfinite(S)] = 0.0
    k = Xt.shape[1]
    meat = np.zeros((k, k))
    for p in range(P):
        rows = np.flatnonzero(p_idx == p)
        if rows.size == 0:
            continue
        g = g_idx[rows]
        Xp = Xt[rows]
        meat += Xp.T @ S[np.ix_(g, g)] @ Xp
    bread = np.linalg.inv(Xt.T @ Xt)
    return bread @ meat @ bread


def prais_winsten_pcse(data: PanelData, rho: float | None = None, panel_rho: bool = False,
                       min_common: int = MIN_COMMON) -> RegressionResult:
    """Prais-Winsten regression with a common AR(1) and panel-corrected SEs.

    ``rho`` fixes the autocorrelation (``rho=0`` reproduces pooled OLS);
    otherwise it is estimated from stage-one OLS residuals within groups.
    """
    data = _sort(data)
    X, y = data.X, data.y
    _check_rank(X, data.names)
    cont = _runs(data.groups, data.periods)
    if rho is None:
        _, e = _ols(y, X)
        rho_row = _estimate_rho(e, data.groups, cont, panel_rho)
    else:
        rho_row = np.full(y.size, float(rho))
    if np.any(np.abs(rho_row) >= 1.0):
        warnings.warn("estimated rho outside (-1, 1); clamped to +/-0.99", RuntimeWarning, stacklevel=2)
        rho_row = np.clip(rho_row, -RHO_CLAMP, RHO_CLAMP)
    Xt = _pw_transform(X, rho_row, cont)
    yt = _pw_transform(y, rho_row, cont)
    _check_rank(Xt, data.names)
    coef, u = _ols(yt, Xt)
    V = _pcse(Xt, u, data.groups, data.periods, min_common)
    n, k = X.shape
    return RegressionResult(
        data.names, coef, np.sqrt(np.diag(V)), V, float(np.mean(rho_row)),
        _r2(yt, u, "const" in data.names), n, len(set(data.groups.tolist())),
        _group_counts(data.groups), "Prais-Winsten PCSE", n - k, "normal", Xt, yt)


# ---------------------------------------------------------------- inference

def economic_impact(coefficient: float, sd_x: float, mean_y: float) -> float:
    """Percent change of the mean response for a one-sd move in x."""
    if mean_y == 0:
        raise ValueError("economic impact is undefined for a zero-mean response")
    return 100.0 * coefficient * sd_x / mean_y


def impacts(result: RegressionResult, data: PanelData, names: Sequence[str] | None = None,
            alpha: float | None = None) -> dict:
    """Economic impact per regressor (sample sd of x, sample mean of y).

    With ``alpha`` only coefficients significant at that level are kept.
    """
    names = [n for n in (names or result.names) if n != "const"]
    mean_y = float(np.mean(data.y))
    out = {}
    for n in names:
        if alpha is not None and result.p_value(n) >= alpha:
            continue
        out[n] = economic_impact(result[n], float(np.std(data.column(n), ddof=1)), mean_y)
    return out


def f_test(result: RegressionResult, names: Sequence[str]) -> tuple[float, float]:
    """Classical F test that ``names`` are jointly zero, on the fitted stage."""
    idx = [result.names.index(n) for n in names]
    Xt, yt = result._Xt, result._yt
    if Xt is None:
        raise ValueError("result does not carry its estimation data")
    _, u = _ols(yt, Xt)
    _, ur = _ols(yt, np.delete(Xt, idx, axis=1))
    q = len(idx)
    rss_u, rss_r = float(u @ u), float(ur @ ur)
    F = ((rss_r - rss_u) / q) / (rss_u / result.df_resid)
    return F, float(stats.f.sf(F, q, result.df_resid))


def wald_test(result: RegressionResult, names: Sequence[str]) -> tuple[float, float]:
    """Wald chi-square test using the result's covariance (e.g. PCSE)."""
    idx = [result.names.index(n) for n in names]
    b = result.coef[idx]
    V = result.vcov[np.ix_(idx, idx)]
    W = float(b @ np.linalg.solve(V, b))
    return W, float(stats.chi2.sf(W, len(idx)))


# ----------------------------------------------------------- diff-in-diff

def diff_in_diff(sr: np.ndarray, quarters: QuarterPanel, treatment: str, *,
                 rank_quarters: Sequence[str] = ("2007Q2", "2007Q3"),
                 pre: str = "2007Q4", post: str = "2008Q4",
                 top_q: float = 0.75, bottom_q: float = 0.25,
                 controls: Sequence[str] = SIZE_CONNECT_SUBST + BALANCE_SHEET,
                 control_lag: int = 1, robust: str | None = "hc1") -> RegressionResult:
    """Two-date difference-in-differences on top vs bottom holders.

    Banks are ranked by their average ``treatment`` ratio over
    ``rank_quarters``; the top quantile is treated, the bottom is control.
    """
    sr = np.asarray(sr, dtype=float)
    qi = {q: i for i, q in enumerate(quarters.quarters)}
    for q in (pre, post, *rank_quarters):
        if q not in qi:
            raise ValueError(f"quarter {q} is not in the panel")
    holdings = quarters.get(treatment)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        score = np.nanmean(holdings[[qi[q] for q in rank_quarters]], axis=0)
    ok = np.isfinite(score)
    if not ok.any():
        raise ValueError("no bank has holdings in the ranking window")
    hi = np.quantile(score[ok], top_q)
    lo = np.quantile(score[ok], bottom_q)
    if hi == lo and np.ptp(score[ok]) == 0:
        raise SingularDesignError("holdings are identical across banks; the Top dummy is constant")
    top = ok & (score >= hi)
    bottom = ok & (score <= lo) & ~top
    if not top.any() or not bottom.any():
        raise ValueError("treatment or control group is empty")
    names = ("post", "top", "post_x_top") + tuple(controls) + ("const",)
    g, per, ys, xs = [], [], [], []
    for j, b in enumerate(quarters.bank_ids):
        if not (top[j] or bottom[j]):
            continue
        for q, is_post in ((pre, 0.0), (post, 1.0)):
            t = qi[q]
            if t - control_lag < 0 and controls:
                continue
            x = [is_post, float(top[j]), is_post * float(top[j])]
            x += [quarters.get(c)[t - control_lag, j] for c in controls]
            x.append(1.0)
            if np.isfinite(sr[t, j]) and np.all(np.isfinite(x)):
                g.append(b)
                per.append(t)
                ys.append(sr[t, j])
                xs.append(x)
    if not ys:
        raise SampleSizeError("no complete difference-in-differences rows")
    data = PanelData(np.array(g), np.array(per, dtype=np.int64), np.array(ys),
                     np.array(xs, dtype=float), names, tuple(quarters.quarters))
    res = pooled_ols(data, robust)
    res.method = "Difference-in-differences " + res.method
    return res


# ------------------------------------------------------ endogeneity chain

@dataclass(frozen=True)
class EndogeneityResult:
    key: str
    beta_naive: float  # predictive regression without correction
    se_naive: float
    delta: float  # AR(1) intercept (mean over banks under fixed effects)
    rho: float  # AR(1) slope as estimated
    rho_adjusted: float  # slope used in the correction term
    omega: float
    omega_se: float
    omega_p: float
    significant: bool
    beta_adjusted: float
    se_adjusted: float
    psi: float
    n_obs: int


def adjusted_risk(data: PanelData, exclude: Sequence[str] = DERIVATIVE_FIELDS) -> np.ndarray:
    """Residual of the pooled regression of risk on the non-excluded regressors."""
    reduced = data.drop([n for n in data.names if n in set(exclude)])
    _check_rank(reduced.X, reduced.names)
    return _ols(reduced.y, reduced.X)[1]


def correction_term(dh_t, dh_lag, delta, rho) -> np.ndarray:
    """DH_t - delta - rho * DH_{t-1}."""
    return np.asarray(dh_t, float) - delta - rho * np.asarray(dh_lag, float)


def _nickell_bias(rho: float, T: float) -> float:
    # large-N limit of the within estimator's bias for an AR(1) of length T
    if abs(1.0 - rho) < 1e-12:
        rho = 1.0 - 1e-12
    a = (1.0 - rho ** T) / (T * (1.0 - rho))
    return -(1.0 + rho) / (T - 1.0) * (1.0 - a) / (1.0 - 2.0 * rho / ((1.0 - rho) * (T - 1.0)) * (1.0 - a))


def _adjust_rho(rho_hat: float, T: float, how: str) -> float:
    if how == "none":
        return rho_hat
    if how == "kendall":
        return min(rho_hat + (1.0 + 3.0 * rho_hat) / T, RHO_CLAMP)
    if how == "nickell":
        f = lambda r: r + _nickell_bias(r, T) - rho_hat
        lo, hi = -RHO_CLAMP, 0.999
        if f(lo) * f(hi) > 0:
            return float(np.clip(rho_hat, lo, hi))
        return float(optimize.brentq(f, lo, hi, xtol=1e-14))
    raise ValueError(f"unknown rho correction {how!r}")


def _within(v, groups):
    out = np.asarray(v, dtype=float).copy()
    for g in np.unique(groups):
        m = groups == g
        out[m] -= out[m].mean(axis=0)
    return out


def _slope_ols(y, X, robust=True):
    coef, resid = _ols(y, X)
    n, k = X.shape
    bread = np.linalg.inv(X.T @ X)
    if robust:
        V = bread @ ((X * resid[:, None] ** 2).T @ X) @ bread * n / max(n - k, 1)
    else:
        V = bread * float(resid @ resid) / max(n - k, 1)
    return coef, np.sqrt(np.diag(V)), resid


def endogeneity_chain(adj: np.ndarray, dh: np.ndarray, key: str = "", *,
                      fixed_effects: bool = True, rho_correction: str = "auto",
                      alpha: float = 0.05, force: bool = False) -> EndogeneityResult:
    """Predictive regression of adjusted risk on lagged holdings, with an
    endogeneity test and a bias-corrected slope.

    ``adj`` and ``dh`` are ``(Q, N)`` panels.  Steps: (i) adj_t on dh_{t-1};
    (ii) AR(1) of dh; (iii) regress step-(i) residuals on the AR(1)
    innovations and t-test the slope omega; (iv) if significant (or
    ``force``), re-estimate (i) adding dh_t - delta - rho * dh_{t-1}.

    When the AR(1) slope in (iv) equals its own least-squares estimate the
    added term is orthogonal to dh_{t-1} and (iv) returns (i) unchanged, so
    by default the slope is bias-adjusted first: Nickell's large-N bias
    under fixed effects, Kendall's otherwise (``rho_correction="auto"``).
    """
    adj = np.asarray(adj, dtype=float)
    dh = np.asarray(dh, dtype=float)
    if adj.shape != dh.shape:
        raise ValueError("adjusted risk and holdings panels differ in shape")
    Q, N = dh.shape
    tt, jj = np.meshgrid(np.arange(1, Q), np.arange(N), indexing="ij")
    y = adj[1:]
    x_lag = dh[:-1]
    x_now = dh[1:]
    ok = np.isfinite(y) & np.isfinite(x_lag) & np.isfinite(x_now)
    groups = jj[ok]
    y, x_lag, x_now = y[ok], x_lag[ok], x_now[ok]
    n = y.size
    if n < 10:
        raise SampleSizeError(f"{n} usable observations for the predictive regression")
    if rho_correction == "auto":
        rho_correction = "nickell" if fixed_effects else "kendall"
    if fixed_effects:
        Y, XL, XN = _within(y, groups), _within(x_lag, groups), _within(x_now, groups)
        design = lambda *cols: np.column_stack(cols)
        T_avg = n / np.unique(groups).size
    else:
        Y, XL, XN = y, x_lag, x_now
        design = lambda *cols: np.column_stack((np.ones(n),) + cols)
        T_avg = float(n)
    s = 0 if fixed_effects else 1  # position of the slope
    # (i) naive predictive regression
    D3 = design(XL)
    _check_rank(D3, ["dh_lag"] if fixed_effects else ["const", "dh_lag"])
    b3, se3, eps = _slope_ols(Y, D3)
    # (ii) AR(1) of holdings
    b4, _, v = _slope_ols(XN, design(XL))
    rho_hat = float(b4[s])
    if fixed_effects:
        delta_i = np.array([x_now[groups == g].mean() - rho_hat * x_lag[groups == g].mean()
                            for g in np.unique(groups)])
        delta = float(delta_i.mean())
    else:
        delta = float(b4[0])
    # (iii) endogeneity test
    b5, se5, _ = _slope_ols(eps, np.column_stack([np.ones(n), v]))
    omega, omega_se = float(b5[1]), float(se5[1])
    omega_p = float(2 * stats.t.sf(abs(omega / omega_se), n - 2)) if omega_se > 0 else 0.0
    significant = omega_p < alpha
    # (iv) corrected regression
    rho_adj = _adjust_rho(rho_hat, T_avg, rho_correction)
    if significant or force:
        corr = XN - rho_adj * XL if fixed_effects else correction_term(x_now, x_lag, delta, rho_adj)
        b6, se6, _ = _slope_ols(Y, design(XL, corr))
        beta_adj, se_adj, psi = float(b6[s]), float(se6[s]), float(b6[s + 1])
    else:
        beta_adj, se_adj, psi = float(b3[s]), float(se3[s]), 0.0
    return EndogeneityResult(key, float(b3[s]), float(se3[s]), delta, rho_hat, rho_adj,
                             omega, omega_se, omega_p, bool(significant), beta_adj, se_adj, psi, n)

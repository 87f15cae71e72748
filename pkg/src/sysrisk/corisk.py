"""Co-risk measures estimated by quantile regression on lagged state variables.

Every reported series is in basis points with a distress-positive sign:
``value = -fitted_growth_quantile * 1e4``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SampleSizeError
from .ingest import GrowthPanel, MarketPanel, StateSeries, portfolio_growth
from .quantreg import QuantileFit, fit_quantile

__all__ = [
    "RiskSeries",
    "CoRiskFit",
    "MEASURE_KINDS",
    "MIN_OBS",
    "to_bp",
    "state_design",
    "var_series",
    "system_series",
    "corisk_fit",
    "delta_covar",
    "delta_coes",
    "asym_delta_covar",
]

MEASURE_KINDS = ("VaR", "dCoVaR", "dCoES", "adCoVaR", "GSV", "NSV")
MIN_OBS = 60
Q_DISTRESS = 0.01
Q_MEDIAN = 0.50
COES_GRID = 10


@dataclass(frozen=True)
class RiskSeries:
    bank_id: str
    kind: str
    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.dates.shape != self.values.shape:
            raise ValueError("dates and values differ in length")


@dataclass(frozen=True)
class CoRiskFit:
    """Bank-equation and system-equation quantile fits at one level.

    For the asymmetric variant the system coefficients are ordered
    ``(alpha, beta_plus, beta_minus, gamma...)``; otherwise
    ``(alpha, beta, gamma...)``.
    """

    bank_id: str
    q: float
    bank: QuantileFit
    system: QuantileFit
    asymmetric: bool = False

    @property
    def beta(self) -> float:
        return float(self.system.coefficients[2 if self.asymmetric else 1])

    @property
    def beta_plus(self) -> float:
        if not self.asymmetric:
            return self.beta
        return float(self.system.coefficients[1])

    @property
    def beta_minus(self) -> float:
        return float(self.system.coefficients[2]) if self.asymmetric else self.beta


def to_bp(raw) -> np.ndarray:
    return -np.asarray(raw, dtype=float) * 1e4


def _state_matrix(m, n: int) -> np.ndarray:
    if m is None:
        return np.zeros((n, 0))
    arr = m.m if isinstance(m, StateSeries) else np.asarray(m, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] != n:
        raise ValueError(f"state variables have {arr.shape[0]} rows, growth series {n}")
    return arr


def state_design(m, n: int) -> np.ndarray:
    """Rows ``(1, M_{t-1})`` for t = 1..n-1."""
    M = _state_matrix(m, n)
    return np.column_stack([np.ones(n - 1), M[:-1]])


def _window(*cols) -> np.ndarray:
    ok = np.ones(cols[0].shape[0], dtype=bool)
    for c in cols:
        ok &= np.all(np.isfinite(c.reshape(c.shape[0], -1)), axis=1)
    if ok.sum() < MIN_OBS:
        raise SampleSizeError(f"{int(ok.sum())} usable weeks, at least {MIN_OBS} required")
    return ok


def _dates(dates, n: int) -> np.ndarray:
    if dates is None:
        return np.arange(n)
    return np.asarray(dates)


def var_series(x_i, m=None, q: float = Q_DISTRESS, dates=None, bank_id: str = "") -> RiskSeries:
    """Conditional q-quantile of ``x_i`` given the lagged state variables."""
    x_i = np.asarray(x_i, dtype=float)
    n = x_i.size
    Z = state_design(m, n)
    y = x_i[1:]
    ok = _window(y, Z)
    fit = fit_quantile(y[ok], Z[ok], q)
    raw = Z[ok] @ fit.coefficients
    return RiskSeries(bank_id, "VaR", _dates(dates, n)[1:][ok], to_bp(raw))


def system_series(growth: GrowthPanel, panel: MarketPanel, bank_id: str | None = None,
                  exclude_bank: bool = False) -> np.ndarray:
    """Growth of the lagged-asset-weighted portfolio of all sample banks."""
    members = [b for b in growth.bank_ids if not (exclude_bank and b == bank_id)]
    return portfolio_growth(growth, panel, members)


def _system_design(x_i: np.ndarray, Z: np.ndarray, asymmetric: bool) -> np.ndarray:
    if asymmetric:
        plus = np.where(x_i >= 0, x_i, 0.0)
        minus = np.where(x_i < 0, x_i, 0.0)
        return np.column_stack([Z[:, :1], plus, minus, Z[:, 1:]])
    return np.column_stack([Z[:, :1], x_i, Z[:, 1:]])


def corisk_fit(x_i, x_sys, m=None, q: float = Q_DISTRESS, asymmetric: bool = False,
               bank_id: str = "") -> tuple[CoRiskFit, np.ndarray, np.ndarray]:
    """Fit both equations at level ``q``.

    Returns the fit, the per-week raw VaR of the bank and the per-week raw
    CoVaR, both restricted to the estimation window.
    """
    x_i = np.asarray(x_i, dtype=float)
    x_sys = np.asarray(x_sys, dtype=float)
    n = x_i.size
    if x_sys.size != n:
        raise ValueError("bank and system series differ in length")
    Z = state_design(m, n)
    yi, ys = x_i[1:], x_sys[1:]
    ok = _window(yi, ys, Z)
    Zw, yi, ys = Z[ok], yi[ok], ys[ok]
    bank = fit_quantile(yi, Zw, q)
    var_raw = Zw @ bank.coefficients
    system = fit_quantile(ys, _system_design(yi, Zw, asymmetric), q)
    c = system.coefficients
    if asymmetric:
        covar_raw = c[0] + c[2] * var_raw + Zw[:, 1:] @ c[3:]
    else:
        covar_raw = c[0] + c[1] * var_raw + Zw[:, 1:] @ c[2:]
    return CoRiskFit(bank_id, q, bank, system, asymmetric), var_raw, covar_raw


def _inputs(bank, growth, m, panel, system, exclude_bank):
    if isinstance(growth, GrowthPanel):
        x_i = growth.series(bank)
        dates = growth.dates
        if system is None:
            if panel is None:
                raise ValueError("a MarketPanel is needed to build the system portfolio")
            system = system_series(growth, panel, bank, exclude_bank)
    else:
        x_i = np.asarray(growth, dtype=float)
        dates = None
        if system is None:
            raise ValueError("pass the system growth series explicitly for raw arrays")
    return x_i, np.asarray(system, dtype=float), dates


def _delta(bank, growth, m, panel, system, exclude_bank, asymmetric, kind,
           q: float, q_median: float, shortcut: bool) -> RiskSeries:
    x_i, x_sys, dates = _inputs(bank, growth, m, panel, system, exclude_bank)
    fit_d, var_d, covar_d = corisk_fit(x_i, x_sys, m, q, asymmetric, bank)
    fit_m, var_m, covar_m = corisk_fit(x_i, x_sys, m, q_median, asymmetric, bank)
    if shortcut:
        raw = fit_d.beta_minus * (var_d - var_m)
    else:
        raw = covar_d - covar_m
    ok = _window(x_i[1:], x_sys[1:], state_design(m, x_i.size))
    return RiskSeries(bank, kind, _dates(dates, x_i.size)[1:][ok], to_bp(raw))


def delta_covar(bank: str, growth, m=None, panel: MarketPanel | None = None, *,
                system=None, exclude_bank: bool = False, q: float = Q_DISTRESS,
                q_median: float = Q_MEDIAN, shortcut: bool = False) -> RiskSeries:
    """CoVaR at distress minus CoVaR at the median state of ``bank``.

    Each CoVaR term uses the coefficients estimated at its own quantile.
    With ``shortcut=True`` the closed form ``beta_q (VaR_q - VaR_50)`` is
    returned instead.

    Note that in the default form an independent bank still picks up the
    spread between the system's own 1% and 50% quantiles through the
    intercepts; only the shortcut vanishes in that case.
    """
    return _delta(bank, growth, m, panel, system, exclude_bank, False, "dCoVaR",
                  q, q_median, shortcut)


def asym_delta_covar(bank: str, growth, m=None, panel: MarketPanel | None = None, *,
                     system=None, exclude_bank: bool = False, q: float = Q_DISTRESS,
                     q_median: float = Q_MEDIAN, shortcut: bool = False) -> RiskSeries:
    """Delta CoVaR with separate slopes for positive and negative bank growth.

    CoVaR is evaluated with the downside slope.
    """
    return _delta(bank, growth, m, panel, system, exclude_bank, True, "adCoVaR",
                  q, q_median, shortcut)


def delta_coes(bank: str, growth, m=None, panel: MarketPanel | None = None, *,
               system=None, exclude_bank: bool = False, q: float = Q_DISTRESS,
               q_median: float = Q_MEDIAN, grid: int = COES_GRID) -> RiskSeries:
    """Tail-averaged CoVaR: CoES(q) = mean_k CoVaR(q k / K), k = 1..K."""
    if grid < 1:
        raise ValueError("tail grid needs at least one point")
    x_i, x_sys, dates = _inputs(bank, growth, m, panel, system, exclude_bank)

    def coes(level):
        parts = [corisk_fit(x_i, x_sys, m, level * k / grid, False, bank)[2]
                 for k in range(1, grid + 1)]
        return np.mean(parts, axis=0)

    raw = coes(q) - coes(q_median)
    ok = _window(x_i[1:], x_sys[1:], state_design(m, x_i.size))
    return RiskSeries(bank, "dCoES", _dates(dates, x_i.size)[1:][ok], to_bp(raw))

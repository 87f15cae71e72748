"""Input panels, CSV loaders, asset-growth construction and a seeded generator.

All panels are immutable once built.  Missing observations are stored as
NaN and are only allowed at the start or end of a bank's sample.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "BankRecord",
    "MarketPanel",
    "GrowthPanel",
    "StateSeries",
    "QuarterPanel",
    "EventTimeline",
    "SimConfig",
    "STATE_COLUMNS",
    "QUARTER_FIELDS",
    "DERIVATIVE_FIELDS",
    "load_market_panel",
    "load_state_series",
    "load_quarter_panel",
    "load_events",
    "compute_growth",
    "portfolio_growth",
    "weighted_growth",
    "asset_values",
    "leverage",
    "quarter_label",
    "simulate_system",
    "write_market_panel",
    "write_state_series",
    "write_quarter_panel",
    "write_events",
]

STATE_COLUMNS = (
    "vix",
    "liquidity_spread",
    "d_tbill_3m",
    "yield_slope",
    "credit_spread",
    "msci_return",
)

DERIVATIVE_FIELDS = (
    "credit_derivatives",
    "interest_rate_derivatives",
    "fx_derivatives",
    "equity_derivatives",
    "commodity_derivatives",
)

# regressors of the determinants equation, in report order
QUARTER_FIELDS = (
    "log_market_value",
    "log_market_value_sq",
    "commercial_paper",
    "loan_to_banks",
    "total_loans",
    "non_interest_to_interest_income",
    "sp500_correlation",
    "net_balance_bank",
    "net_balance_nonbank",
    "leverage",
    "maturity_mismatch",
    "total_deposits",
    "npl_ratio",
) + DERIVATIVE_FIELDS

NOTIONAL_FIELDS = tuple("notional_" + f for f in DERIVATIVE_FIELDS)
OPTIONAL_QUARTER_FIELDS = ("log_market_value_sq",) + NOTIONAL_FIELDS

MARKET_COLUMNS = ("date", "bank_id", "market_equity", "total_assets", "book_equity")


@dataclass(frozen=True)
class BankRecord:
    id: str
    market_equity: np.ndarray
    total_assets: np.ndarray
    book_equity: np.ndarray

    @property
    def assets(self) -> np.ndarray:
        """Market value of total financial assets, ME * TA / BE."""
        return self.market_equity * self.total_assets / self.book_equity


@dataclass(frozen=True)
class MarketPanel:
    dates: np.ndarray  # datetime64[D], strictly increasing
    banks: tuple[BankRecord, ...]

    @property
    def bank_ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.banks)

    def bank(self, bank_id: str) -> BankRecord:
        for b in self.banks:
            if b.id == bank_id:
                return b
        raise KeyError(bank_id)

    def assets_matrix(self) -> np.ndarray:
        """(T, N) matrix of asset values, NaN where unobserved."""
        return np.column_stack([b.assets for b in self.banks])


@dataclass(frozen=True)
class GrowthPanel:
    dates: np.ndarray
    bank_ids: tuple[str, ...]
    x: np.ndarray  # (T-1, N); NaN where t or t-1 is unobserved

    def series(self, bank_id: str) -> np.ndarray:
        return self.x[:, self.bank_ids.index(bank_id)]


@dataclass(frozen=True)
class StateSeries:
    dates: np.ndarray
    m: np.ndarray  # (T, 6) in STATE_COLUMNS order
    names: tuple[str, ...] = STATE_COLUMNS

    def fingerprint(self) -> str:
        h = hashlib.sha1(self.dates.astype("int64").tobytes())
        h.update(np.ascontiguousarray(self.m).tobytes())
        return h.hexdigest()[:16]

    def aligned(self, dates: np.ndarray) -> "StateSeries":
        """Restrict to ``dates``; every requested date must be present."""
        pos = np.searchsorted(self.dates, dates)
        if np.any(pos >= self.dates.size) or np.any(self.dates[np.minimum(pos, self.dates.size - 1)] != dates):
            raise ValidationError("state series does not cover the requested dates")
        return StateSeries(np.asarray(dates), self.m[pos], self.names)


@dataclass(frozen=True)
class QuarterPanel:
    quarters: tuple[str, ...]
    bank_ids: tuple[str, ...]
    fields: dict  # name -> (Q, N) float array, NaN where missing

    def get(self, name: str) -> np.ndarray:
        return self.fields[name]


@dataclass(frozen=True)
class EventTimeline:
    entries: tuple[tuple[np.datetime64, str], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.entries)


def quarter_label(date) -> str:
    d = np.datetime64(date, "D").astype(dt.date)
    return f"{d.year}Q{(d.month - 1) // 3 + 1}"


def _parse_date(text: str, line: int, path) -> np.datetime64:
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()), "D")
    except ValueError:
        raise ParseError(f"{path}:{line}: bad ISO date {text!r}") from None


def _parse_float(text: str, col: str, line: int, path) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{path}:{line}: column {col!r} is not a number: {text!r}") from None
    if not np.isfinite(v):
        raise ParseError(f"{path}:{line}: column {col!r} is not finite")
    return v


def _read_rows(path, required: Sequence[str], optional: Sequence[str] = ()):
    """Yield (line_number, row dict) after checking the header."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        allowed = set(required) | set(optional)
        for col in header:
            if col not in allowed:
                raise ParseError(f"{path}:1: unknown column {col!r}")
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"{path}:1: missing column(s) {', '.join(missing)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            rows.append((line, dict(zip(header, (c.strip() for c in row)))))
    return header, rows


def _contiguous(mask: np.ndarray) -> bool:
    idx = np.flatnonzero(mask)
    return idx.size == 0 or idx[-1] - idx[0] + 1 == idx.size


def load_market_panel(path) -> MarketPanel:
    """Read ``date,bank_id,market_equity,total_assets,book_equity`` rows."""
    _, rows = _read_rows(path, MARKET_COLUMNS)
    data: dict[str, dict] = {}
    all_dates = set()
    for line, row in rows:
        d = _parse_date(row["date"], line, path)
        bank = row["bank_id"]
        if not bank:
            raise ParseError(f"{path}:{line}: empty bank_id")
        vals = []
        for col in MARKET_COLUMNS[2:]:
            v = _parse_float(row[col], col, line, path)
            if v <= 0:
                raise ValidationError(f"{path}:{line}: {col} must be positive for bank {bank!r}, got {v}")
            vals.append(v)
        per_bank = data.setdefault(bank, {})
        if d in per_bank:
            raise ValidationError(f"{path}:{line}: duplicate row for bank {bank!r} on {d}")
        per_bank[d] = vals
        all_dates.add(d)
    if not data:
        raise ValidationError(f"{path}: no data rows")
    dates = np.array(sorted(all_dates), dtype="datetime64[D]")
    pos = {d: i for i, d in enumerate(dates)}
    banks = []
    for bank in sorted(data):
        arr = np.full((dates.size, 3), np.nan)
        for d, vals in data[bank].items():
            arr[pos[d]] = vals
        observed = ~np.isnan(arr[:, 0])
        if not _contiguous(observed):
            idx = np.flatnonzero(observed)
            gap = idx[0] + np.flatnonzero(~observed[idx[0]:idx[-1] + 1])[0]
            raise ValidationError(f"{path}: bank {bank!r} has an interior gap at {dates[gap]}")
        banks.append(BankRecord(bank, arr[:, 0], arr[:, 1], arr[:, 2]))
    return MarketPanel(dates, tuple(banks))


def load_state_series(path) -> StateSeries:
    _, rows = _read_rows(path, ("date",) + STATE_COLUMNS)
    dates, values = [], []
    for line, row in rows:
        dates.append(_parse_date(row["date"], line, path))
        values.append([_parse_float(row[c], c, line, path) for c in STATE_COLUMNS])
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    dates = np.array(dates, dtype="datetime64[D]")
    order = np.argsort(dates, kind="stable")
    dates = dates[order]
    if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
        raise ValidationError(f"{path}: duplicate dates")
    return StateSeries(dates, np.array(values)[order])


def load_quarter_panel(path) -> QuarterPanel:
    required = tuple(f for f in QUARTER_FIELDS if f not in OPTIONAL_QUARTER_FIELDS)
    header, rows = _read_rows(path, ("quarter", "bank_id") + required, OPTIONAL_QUARTER_FIELDS)
    present = [c for c in header if c not in ("quarter", "bank_id")]
    recs = {}
    for line, row in rows:
        qtr = row["quarter"].upper()
        if len(qtr) != 6 or qtr[4] != "Q" or not qtr[:4].isdigit() or qtr[5] not in "1234":
            raise ParseError(f"{path}:{line}: bad quarter label {row['quarter']!r}")
        vals = {c: _parse_float(row[c], c, line, path) for c in present}
        for c in DERIVATIVE_FIELDS + NOTIONAL_FIELDS:
            if c in vals and vals[c] < 0:
                raise ValidationError(f"{path}:{line}: {c} must be reported as an absolute value")
        if not 0.0 <= vals["npl_ratio"] <= 1.0:
            raise ValidationError(f"{path}:{line}: npl_ratio outside [0, 1]")
        key = (qtr, row["bank_id"])
        if key in recs:
            raise ValidationError(f"{path}:{line}: duplicate row for {key}")
        recs[key] = vals
    if not recs:
        raise ValidationError(f"{path}: no data rows")
    quarters = tuple(sorted({k[0] for k in recs}))
    banks = tuple(sorted({k[1] for k in recs}))
    qi = {q: i for i, q in enumerate(quarters)}
    bi = {b: i for i, b in enumerate(banks)}
    fields = {c: np.full((len(quarters), len(banks)), np.nan) for c in present}
    for (qtr, bank), vals in recs.items():
        for c, v in vals.items():
            fields[c][qi[qtr], bi[bank]] = v
    if "log_market_value_sq" not in fields:
        fields["log_market_value_sq"] = fields["log_market_value"] ** 2
    return QuarterPanel(quarters, banks, fields)


_KIND_ALIASES = {"event": "event", "action": "policy_action", "policy_action": "policy_action"}


def load_events(path) -> EventTimeline:
    _, rows = _read_rows(path, ("date", "kind"))
    entries = []
    for line, row in rows:
        kind = _KIND_ALIASES.get(row["kind"].lower())
        if kind is None:
            raise ParseError(f"{path}:{line}: unknown event kind {row['kind']!r}")
        entries.append((_parse_date(row["date"], line, path), kind))
    entries.sort(key=lambda e: (e[0], e[1]))
    return EventTimeline(tuple(entries))


def asset_values(panel: MarketPanel) -> np.ndarray:
    return panel.assets_matrix()


def compute_growth(panel: MarketPanel) -> GrowthPanel:
    """Simple weekly growth of ME * TA / BE for every bank."""
    A = panel.assets_matrix()
    with np.errstate(invalid="ignore"):
        x = A[1:] / A[:-1] - 1.0
    return GrowthPanel(panel.dates[1:], panel.bank_ids, x)


def portfolio_growth(growth: GrowthPanel, panel: MarketPanel, members: Iterable[str]) -> np.ndarray:
    """Lagged-asset-weighted average growth of ``members``.

    Banks without a growth observation at t carry no weight at t.  Sums run
    over members in panel order, so a singleton reproduces its own series.
    """
    members = set(members)
    if not members:
        raise ValueError("portfolio needs at least one member")
    unknown = members - set(growth.bank_ids)
    if unknown:
        raise KeyError(f"unknown bank(s): {sorted(unknown)}")
    idx = [j for j, b in enumerate(growth.bank_ids) if b in members]
    A_lag = panel.assets_matrix()[:-1]
    return weighted_growth(A_lag[:, idx], growth.x[:, idx])


def weighted_growth(A_lag: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum_j w_j x_j with w_j = A_lag_j / sum_k A_lag_k, over finite x."""
    ok = ~np.isnan(x) & ~np.isnan(A_lag)
    den = np.zeros(x.shape[0])
    for j in range(x.shape[1]):
        den += np.where(ok[:, j], A_lag[:, j], 0.0)
    out = np.zeros(x.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        for j in range(x.shape[1]):
            out += np.where(ok[:, j], (A_lag[:, j] / den) * x[:, j], 0.0)
    out[den == 0] = np.nan
    return out


def leverage(book_assets, book_equity, market_equity):
    """(book assets - book equity + market equity) / market equity."""
    me = np.asarray(market_equity, dtype=float)
    if np.any(me <= 0):
        raise ValueError("market equity must be positive")
    out = (np.asarray(book_assets, float) - np.asarray(book_equity, float) + me) / me
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SimConfig:
    """Settings of the one-factor regime-switching generator.

    Stress windows are half-open week ranges ``(start, end)``.  Inside a
    window the factor loadings are multiplied by ``stress_loading`` and the
    factor volatility by ``stress_vol``; the state variables shift towards
    distress one week ahead of the returns they condition, by
    ``state_shift`` (one entry per state column).  Idiosyncratic volatility
    scales with the lagged liquidity spread at elasticity ``idio_liquidity``
    and by ``stress_idio`` inside stress windows.
    """

    n_banks: int = 8
    n_weeks: int = 300
    stress_windows: tuple[tuple[int, int], ...] = ((150, 170),)
    base_loading: float = 1.0
    loading_spread: float = 0.5
    stress_loading: float = 2.0
    factor_vol: float = 0.015
    stress_vol: float = 3.0
    idio_vol: float = 0.02
    idio_liquidity: float = 0.25
    stress_idio: float = 1.0
    state_shift: tuple[float, ...] = (12.0, 0.6, -0.3, 0.8, 1.5, -0.02)
    t_dof: float = 4.0
    start_date: str = "2002-01-04"
    events_per_window: int = 3
    actions_per_window: int = 2


def _student_t(rng: np.random.Generator, dof: float, size) -> np.ndarray:
    # unit-variance Student t
    return rng.standard_t(dof, size=size) * np.sqrt((dof - 2.0) / dof)


def simulate_system(config: SimConfig, seed: int):
    """Generate a synthetic banking system.

    Returns ``(MarketPanel, StateSeries, QuarterPanel, EventTimeline)``; the
    output is a pure function of ``(config, seed)``.
    """
    N, T = config.n_banks, config.n_weeks
    if N < 2:
        raise ValueError("simulate_system needs at least 2 banks")
    if T < 60:
        raise ValueError("simulate_system needs at least 60 weeks")
    for s, e in config.stress_windows:
        if not 0 <= s < e <= T:
            raise ValueError(f"stress window {(s, e)} outside 0..{T}")
    rng = np.random.default_rng(seed)
    dates = np.datetime64(config.start_date, "D") + 7 * np.arange(T)
    stress = np.zeros(T, dtype=bool)
    for s, e in config.stress_windows:
        stress[s:e] = True

    # state variables: persistent AR(1) deviations plus a distress shift
    lead = np.zeros(T, dtype=bool)
    lead[:-1] = stress[1:]
    shift = np.asarray(config.state_shift, dtype=float)
    level = np.array([20.0, 0.3, 0.0, 1.5, 2.0, 0.001])
    vol = np.array([1.5, 0.05, 0.08, 0.1, 0.08, 0.02])
    phi = np.array([0.9, 0.8, 0.2, 0.95, 0.9, 0.1])
    dev = np.zeros((T, 6))
    shocks = rng.standard_normal((T, 6))
    for t in range(1, T):
        dev[t] = phi * dev[t - 1] + vol * shocks[t]
    m = level + dev + np.outer(lead, shift)
    # idiosyncratic risk follows the liquidity spread, systemic risk the VIX
    vix_z = (m[:, 0] - level[0]) / 12.0
    liq_z = dev[:, 1] / vol[1] * np.sqrt(1 - phi[1] ** 2)

    loadings = config.base_loading + config.loading_spread * rng.uniform(-1, 1, N)
    idio = config.idio_vol * rng.uniform(0.6, 1.4, N)
    fvol = config.factor_vol * np.ones(T)
    fvol[1:] *= np.exp(np.log(config.stress_vol) * np.clip(vix_z[:-1], -0.5, 1.5))
    factor = fvol * _student_t(rng, config.t_dof, T)
    load_t = np.outer(np.where(stress, config.stress_loading, 1.0), loadings)
    ivol = np.outer(np.where(stress, config.stress_idio, 1.0), idio)
    ivol[1:] *= np.exp(config.idio_liquidity * np.clip(liq_z[:-1], -3, 3))[:, None]
    eps = ivol * _student_t(rng, config.t_dof, (T, N))
    x = 0.001 + load_t * factor[:, None] + eps
    x = np.clip(x, -0.6, 0.6)

    size = np.exp(rng.normal(np.log(5e4), 1.0, N))
    A = np.empty((T, N))
    A[0] = size
    for t in range(1, T):
        A[t] = A[t - 1] * (1.0 + x[t])

    quarters = [quarter_label(d) for d in dates]
    qlabels = sorted(set(quarters))
    qidx = np.array([qlabels.index(q) for q in quarters])
    # book leverage TA/BE is a per-quarter step function
    lev_q = np.exp(rng.normal(np.log(10.0), 0.15, N) + np.cumsum(rng.normal(0, 0.03, (len(qlabels), N)), axis=0))
    pb = np.exp(rng.normal(np.log(1.5), 0.2, N))
    ta_over_be = lev_q[qidx]
    me = A / ta_over_be
    be = me / pb
    ta = be * ta_over_be
    # make ME * TA / BE reproduce A exactly
    banks = tuple(
        BankRecord(f"B{i + 1:02d}", me[:, i].copy(), ta[:, i].copy(), be[:, i].copy())
        for i in range(N)
    )
    panel = MarketPanel(dates, banks)
    growth_dates = dates[1:]
    state = StateSeries(growth_dates, m[1:].copy())

    qp = _simulate_quarters(rng, qlabels, qidx, me, ta, be, loadings, x)

    entries = []
    for s, e in config.stress_windows:
        span = max(e - s, 1)
        ev_weeks = s + np.sort(rng.choice(span, size=min(config.events_per_window, span), replace=False))
        for w in ev_weeks:
            entries.append((dates[w], "event"))
        act_lo = s + span // 2
        act_span = max(e - act_lo, 1)
        act_weeks = act_lo + np.sort(rng.choice(act_span, size=min(config.actions_per_window, act_span), replace=False))
        for w in act_weeks:
            if w < T:
                entries.append((dates[w], "policy_action"))
    entries.sort(key=lambda e: (e[0], e[1]))
    return panel, state, qp, EventTimeline(tuple(entries))


def _simulate_quarters(rng, qlabels, qidx, me, ta, be, loadings, x) -> QuarterPanel:
    Q, N = len(qlabels), me.shape[1]
    last = np.array([np.flatnonzero(qidx == k)[-1] for k in range(Q)])
    me_q, ta_q, be_q = me[last], ta[last], be[last]
    fields = {}
    lmv = np.log(me_q)
    fields["log_market_value"] = lmv
    fields["log_market_value_sq"] = lmv ** 2

    def ratio(mean, sd, lo=0.0, hi=None, persist=0.9):
        base = rng.normal(mean, sd, N)
        noise = np.zeros((Q, N))
        for k in range(1, Q):
            noise[k] = persist * noise[k - 1] + rng.normal(0, sd * 0.3, N)
        out = np.clip(base + noise, lo, hi)
        return out

    fields["commercial_paper"] = ratio(0.005, 0.004)
    fields["loan_to_banks"] = ratio(0.002, 0.002)
    fields["total_loans"] = ratio(0.61, 0.1, 0.05, 0.95)
    fields["non_interest_to_interest_income"] = ratio(0.5, 0.3)
    corr = np.empty((Q, N))
    for k in range(Q):
        corr[k] = np.corrcoef(np.vstack([x[qidx == k].T, x[qidx == k].mean(axis=1)]))[-1, :-1]
    fields["sp500_correlation"] = np.nan_to_num(corr)
    fields["net_balance_bank"] = ratio(0.001, 0.002, -0.02, 0.02)
    fields["net_balance_nonbank"] = ratio(0.01, 0.01, -0.05, 0.1)
    fields["leverage"] = leverage(ta_q, be_q, me_q)
    fields["maturity_mismatch"] = ratio(0.1, 0.05)
    fields["total_deposits"] = ratio(0.7, 0.1, 0.1, 0.95)
    fields["npl_ratio"] = ratio(0.015, 0.01, 0.0, 1.0)
    # derivative use scales with the bank's factor loading
    scale = np.clip(loadings - loadings.min() + 0.2, 0.1, None)
    for name, mean in zip(DERIVATIVE_FIELDS, (0.002, 0.03, 0.005, 0.001, 0.001)):
        base = ratio(mean, mean * 0.5)
        fields[name] = base * scale
        fields["notional_" + name] = fields[name] * rng.uniform(20, 60, N)
    return QuarterPanel(tuple(qlabels), tuple(f"B{i + 1:02d}" for i in range(N)), fields)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_market_panel(panel: MarketPanel, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MARKET_COLUMNS)
        for t, d in enumerate(panel.dates):
            for b in panel.banks:
                if np.isnan(b.market_equity[t]):
                    continue
                w.writerow([str(d), b.id, _fmt(b.market_equity[t]), _fmt(b.total_assets[t]), _fmt(b.book_equity[t])])


def write_state_series(state: StateSeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date",) + STATE_COLUMNS)
        for d, row in zip(state.dates, state.m):
            w.writerow([str(d)] + [_fmt(v) for v in row])


def write_quarter_panel(qp: QuarterPanel, path) -> None:
    cols = [c for c in QUARTER_FIELDS + NOTIONAL_FIELDS if c in qp.fields]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "bank_id"] + cols)
        for i, q in enumerate(qp.quarters):
            for j, b in enumerate(qp.bank_ids):
                vals = [qp.fields[c][i, j] for c in cols]
                if all(np.isnan(v) for v in vals):
                    continue
                w.writerow([q, b] + [_fmt(v) for v in vals])


def write_events(events: EventTimeline, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "kind"))
        for d, kind in events.entries:
            w.writerow([str(d), kind])

"""Glue between the weekly measures and the quarterly regressions."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .corisk import RiskSeries, asym_delta_covar, delta_coes, delta_covar
from .ingest import GrowthPanel, MarketPanel, QuarterPanel, StateSeries, compute_growth, quarter_label
from .ranking import MEASURE_ORDER
from .shapley import CharacteristicCache, build_system_spec, net_shapley

__all__ = ["ALL_MEASURES", "compute_measures", "to_quarterly", "quarterly_matrix"]

ALL_MEASURES = MEASURE_ORDER  # NSV, GSV, dCoVaR, dCoES, adCoVaR
_CO_RISK = {"dCoVaR": delta_covar, "dCoES": delta_coes, "adCoVaR": asym_delta_covar}


def compute_measures(panel: MarketPanel, state: StateSeries | None,
                     kinds: Sequence[str] = ALL_MEASURES, *, growth: GrowthPanel | None = None,
                     banks: Iterable[str] | None = None, system_size: int = 16,
                     mode: str = "core_plus_target", q: float = 0.01,
                     cache: CharacteristicCache | None = None,
                     threads: int = 1) -> dict[str, dict[str, RiskSeries]]:
    """Every requested measure for every bank: ``{bank: {kind: RiskSeries}}``.

    Shapley measures use a system of ``min(system_size, N)`` banks built
    around each target, sharing one characteristic cache across targets.
    """
    unknown = set(kinds) - set(ALL_MEASURES)
    if unknown:
        raise ValueError(f"unknown measures {sorted(unknown)}")
    growth = growth or compute_growth(panel)
    banks = list(banks or panel.bank_ids)
    m = None if state is None else state.aligned(growth.dates).m
    out: dict[str, dict[str, RiskSeries]] = {b: {} for b in banks}
    if {"NSV", "GSV"} & set(kinds):
        if cache is None:
            cache = CharacteristicCache(panel, m, q, threads=threads)
        n = min(system_size, len(panel.bank_ids))
        for b in banks:
            res = net_shapley(b, build_system_spec(panel, b, n, mode), cache)
            if "NSV" in kinds:
                out[b]["NSV"] = res.nsv
            if "GSV" in kinds:
                out[b]["GSV"] = res.gsv
    for kind in kinds:
        fn = _CO_RISK.get(kind)
        if fn is None:
            continue
        for b in banks:
            out[b][kind] = fn(b, growth, m, panel, q=q)
    # stable measure order inside each bank
    return {b: {k: out[b][k] for k in ALL_MEASURES if k in out[b]} for b in banks}


def to_quarterly(series: RiskSeries, quarters: Sequence[str], how: str = "last") -> np.ndarray:
    """Reduce a weekly series to ``quarters``: last observed week or the sum.

    Quarters without any observation are NaN.
    """
    if how not in ("last", "sum"):
        raise ValueError(f"unknown quarterly reduction {how!r}")
    labels = np.array([quarter_label(d) for d in series.dates])
    vals = np.asarray(series.values, dtype=float)
    out = np.full(len(quarters), np.nan)
    for k, q in enumerate(quarters):
        sel = np.flatnonzero(labels == q)
        if sel.size:
            out[k] = vals[sel[-1]] if how == "last" else float(np.sum(vals[sel]))
    return out


def quarterly_matrix(measures: Mapping[str, Mapping[str, RiskSeries]], kind: str,
                     quarters: QuarterPanel, how: str = "last") -> np.ndarray:
    """``(Q, N)`` panel of one measure aligned with a QuarterPanel."""
    cols = []
    for b in quarters.bank_ids:
        s = measures.get(b, {}).get(kind)
        cols.append(np.full(len(quarters.quarters), np.nan) if s is None
                    else to_quarterly(s, quarters.quarters, how))
    return np.column_stack(cols)

import numpy as np
import pytest

from sysrisk.ingest import BankRecord, MarketPanel, SimConfig, compute_growth, simulate_system


@pytest.fixture(scope="session")
def small_system():
    panel, state, quarters, events = simulate_system(SimConfig(n_banks=8, n_weeks=300), seed=7)
    return panel, compute_growth(panel), state, quarters, events


def panel_from_assets(A, ids=None, start="2005-01-07"):
    """MarketPanel whose ME * TA / BE equals ``A`` (T x N)."""
    A = np.asarray(A, dtype=float)
    T, N = A.shape
    ids = ids or [f"B{j + 1:02d}" for j in range(N)]
    dates = np.datetime64(start, "D") + 7 * np.arange(T)
    ones = np.ones(T)
    banks = tuple(BankRecord(ids[j], A[:, j].copy(), ones * 10.0, ones * 10.0) for j in range(N))
    return MarketPanel(dates, banks)


def panel_from_growth(x, start_level=None):
    """MarketPanel whose weekly growth reproduces ``x`` (T-1 x N)."""
    x = np.asarray(x, dtype=float)
    T1, N = x.shape
    A = np.empty((T1 + 1, N))
    A[0] = 100.0 if start_level is None else start_level
    for t in range(T1):
        A[t + 1] = A[t] * (1.0 + x[t])
    return panel_from_assets(A)

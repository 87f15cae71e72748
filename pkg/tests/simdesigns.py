"""Seeded simulation designs with known truth, shared by the panel tests."""

import numpy as np

from sysrisk.ingest import DERIVATIVE_FIELDS, QuarterPanel
from sysrisk.panelreg import BALANCE_SHEET, SIZE_CONNECT_SUBST, PanelData


def panel(seed, n_groups=20, T=20, beta=(1.0, -0.5, 2.0), rho=0.0, noise=1.0, counts=None):
    """Long panel with AR(1) errors; last coefficient is the intercept."""
    rng = np.random.default_rng(seed)
    counts = counts or [T] * n_groups
    g, per, ys, xs = [], [], [], []
    k = len(beta) - 1
    for i, Ti in enumerate(counts):
        x = rng.standard_normal((Ti, k))
        e = np.empty(Ti)
        e[0] = rng.standard_normal() / np.sqrt(1 - rho ** 2)
        for t in range(1, Ti):
            e[t] = rho * e[t - 1] + rng.standard_normal()
        X = np.column_stack([x, np.ones(Ti)])
        ys.append(X @ np.asarray(beta) + noise * e)
        xs.append(X)
        g += [f"g{i:02d}"] * Ti
        per += list(range(Ti))
    names = tuple(f"x{j}" for j in range(k)) + ("const",)
    return PanelData(np.array(g), np.array(per), np.concatenate(ys), np.vstack(xs), names)


def quarters(Q=12, N=10, seed=0, start=2006):
    rng = np.random.default_rng(seed)
    labels = tuple(f"{start + k // 4}Q{k % 4 + 1}" for k in range(Q))
    fields = {f: rng.standard_normal((Q, N)) for f in SIZE_CONNECT_SUBST + BALANCE_SHEET}
    for f in DERIVATIVE_FIELDS:
        fields[f] = np.abs(rng.standard_normal((Q, N)))
    return QuarterPanel(labels, tuple(f"B{j:02d}" for j in range(N)), fields)


def did_setup(seed, delta, N=95, noise=1.0, controls=True):
    rng = np.random.default_rng(seed)
    qp = quarters(Q=12, N=N, seed=seed, start=2007)  # 2007Q1 .. 2009Q4
    hold = qp.get("credit_derivatives")
    score = hold[1:3].mean(axis=0)
    top = score >= np.quantile(score, 0.75)
    sr = rng.normal(10.0, 2.0, N)[None, :] + noise * rng.standard_normal((12, N))
    if controls:
        sr[1:] += 0.7 * qp.get("leverage")[:-1] - 0.3 * qp.get("log_market_value")[:-1]
    post = np.array([q >= "2008Q4" for q in qp.quarters])
    sr += 3.0 * post[:, None] + delta * np.outer(post, top)
    return sr, qp


def endo_design(seed, corr, N=95, T=36, rho=0.9, beta=0.5):
    rng = np.random.default_rng(seed)
    cov = [[1.0, corr], [corr, 1.0]]
    shocks = rng.multivariate_normal([0, 0], cov, size=(T, N))  # eps, v
    mu = rng.normal(0, 1, N)
    dh = np.empty((T, N))
    dh[0] = mu / (1 - rho) + shocks[0, :, 1] / np.sqrt(1 - rho ** 2)
    for t in range(1, T):
        dh[t] = mu + rho * dh[t - 1] + shocks[t, :, 1]
    adj = np.empty((T, N))
    adj[0] = np.nan
    adj[1:] = rng.normal(0, 1, N) + beta * dh[:-1] + shocks[1:, :, 0]
    return adj, dh

"""Acceptance suite: one PASS/FAIL line per criterion, then the assertion.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed even under output capture.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_quantile_loss_batched
from simdesigns import did_setup, endo_design, panel, quarters
from sysrisk import cli
from sysrisk.corisk import RiskSeries, asym_delta_covar, delta_coes, delta_covar, var_series
from sysrisk.ingest import EventTimeline, SimConfig, compute_growth, simulate_system
from sysrisk.panelreg import (
    LABELS,
    PanelSpec,
    assemble_panel,
    diff_in_diff,
    economic_impact,
    endogeneity_chain,
    impacts,
    pooled_ols,
    prais_winsten_pcse,
)
from sysrisk.pipeline import compute_measures
from sysrisk.quantreg import check_loss, fit_quantile
from sysrisk.ranking import build_iev, granger_test, score_measures
from sysrisk.shapley import (
    CharacteristicCache,
    SystemSpec,
    brute_shapley,
    build_system_spec,
    characteristic,
    gross_shapley,
    net_shapley,
)

KINDS = ("NSV", "GSV", "dCoVaR", "dCoES", "adCoVaR")


def report(capsys, number, name, checks):
    """Print one summary line; ``checks`` maps a label to (ok, detail)."""
    ok = all(c[0] for c in checks.values())
    detail = "; ".join(f"{k}: {d}{'' if c else ' [FAIL]'}" for k, (c, d) in checks.items())
    with capsys.disabled():
        print(f"\nCRITERION {number} {name}: {'PASS' if ok else 'FAIL'} | {detail}")
    return ok


def _certificate(fit, y, X):
    r = fit.residuals(y, X)
    tol = 1e-12 * (1 + np.abs(y).max())
    n, p = X.shape
    neg = int(np.sum(r < -tol))
    nonpos = int(np.sum(r <= tol))
    return neg <= n * fit.q + 1e-9 and nonpos >= n * fit.q - p - 1e-9


def test_criterion_1_quantile_oracle(capsys):
    qs = (0.01, 0.05, 0.25, 0.5)
    rng = np.random.default_rng(2024)
    cases = []
    for k in range(200):
        p = 1 + k % 3
        n = int(rng.integers(max(p, 5), 51))
        X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
        y = X @ rng.standard_normal(p) + rng.standard_t(3, n)
        cases.append((y, X, qs[k % 4]))
    fit_quantile(*cases[0])  # compile the kernels outside the timed loop
    t0 = time.perf_counter()
    fits = [fit_quantile(y, X, q) for y, X, q in cases]
    elapsed = time.perf_counter() - t0
    worst, certs = 0.0, 0
    for (y, X, q), fit in zip(cases, fits):
        oracle = brute_force_quantile_loss_batched(y, X, q)
        loss = check_loss(fit.residuals(y, X), q)
        worst = max(worst, abs(loss - oracle) / max(abs(oracle), 1e-300))
        certs += _certificate(fit, y, X)
    ok = report(capsys, 1, "quantile-regression oracle", {
        "max rel loss gap": (worst <= 1e-8, f"{worst:.2e} (<= 1e-8)"),
        "subgradient conditions": (certs == 200, f"{certs}/200"),
        "runtime": (elapsed < 10, f"{elapsed:.2f} s (< 10 s)"),
    })
    assert ok


def _shapley_system(N, seed, T=200):
    rng = np.random.default_rng(seed)
    cfg = SimConfig(n_banks=N, n_weeks=T, stress_windows=((T // 2, T // 2 + 20),))
    panel_, state, _, _ = simulate_system(cfg, seed=int(rng.integers(1 << 30)))
    growth = compute_growth(panel_)
    return panel_, state.aligned(growth.dates).m


def test_criterion_2_shapley_correctness(capsys):
    gap = eff = 0.0
    nsv_exact = True
    systems = 0
    for N in range(2, 9):
        for seed in range(20):
            panel_, m = _shapley_system(N, 100 * N + seed)
            cache = CharacteristicCache(panel_, m)
            total = 0.0
            for b in panel_.bank_ids:
                spec = SystemSpec(panel_.bank_ids, b)
                res = net_shapley(b, spec, cache)
                g = res.gsv.values
                if N <= 6 or b == panel_.bank_ids[0]:
                    # the all-orderings oracle is N! per target; one target for N >= 7
                    gap = max(gap, float(np.max(np.abs(g - brute_shapley(b, spec, panel_, m).values))))
                nsv_exact &= bool(np.array_equal(res.nsv.values, g - res.var_i.values / N))
                total = total + g
            full = characteristic(panel_.bank_ids, cache=cache).values
            eff = max(eff, float(np.max(np.abs(total - full))))
            systems += 1
    ok = report(capsys, 2, "Shapley correctness", {
        "gross vs brute": (gap <= 1e-9, f"max |diff| {gap:.1e} over {systems} systems"),
        "efficiency": (eff <= 1e-9, f"max |sum GSV - full| {eff:.1e}"),
        "NSV identity": (nsv_exact, "exact" if nsv_exact else "inexact"),
    })
    assert ok


@pytest.mark.slow
def test_criterion_3_shapley_performance(capsys):
    import os
    threads = os.cpu_count() or 1
    panel_, state, _, _ = simulate_system(SimConfig(n_banks=20, n_weeks=501), seed=3)
    m = state.aligned(compute_growth(panel_).dates).m
    avg = np.nanmean(panel_.assets_matrix(), axis=0)
    largest = [panel_.bank_ids[j] for j in np.argsort(-avg, kind="stable")[:10]]
    specs = [build_system_spec(panel_, b, 16, "core_plus_target") for b in largest]
    # warm-up on a throwaway 4-bank game so JIT compilation is not timed
    gross_shapley(largest[0], SystemSpec(tuple(largest[:4]), largest[0]), CharacteristicCache(panel_, m))

    cold = CharacteristicCache(panel_, m, threads=threads)
    t0 = time.perf_counter()
    gross_shapley(largest[0], specs[0], cold)
    t_cold = time.perf_counter() - t0
    one_target_evals = cold.misses

    shared = CharacteristicCache(panel_, m, threads=threads)
    t0 = time.perf_counter()
    for b, spec in zip(largest, specs):
        gross_shapley(b, spec, shared)
    t_total = time.perf_counter() - t0
    hit_rate = shared.hits / (shared.hits + shared.misses)
    speedup = 10 * t_cold / t_total
    ok = report(capsys, 3, "Shapley performance", {
        "one target N=16 T=500": (t_cold < 60, f"{t_cold:.1f} s for {one_target_evals} coalitions "
                                               f"on {threads} core(s) (< 60 s)"),
        "10-target hit rate": (hit_rate > 0.9, f"{shared.hits}/{shared.hits + shared.misses} = {hit_rate:.6f} "
                                               f"(> 0.9; a cold shared cache tops out at 9/10)"),
        "speedup vs cold": (speedup > 5, f"{speedup:.2f}x (> 5x)"),
    })
    assert ok


def test_criterion_4_corisk_identities(capsys):
    rng = np.random.default_rng(44)
    gap_id = gap_asym = 0.0
    asym_exact = coes_exact = True
    for seed in range(10):
        x = 0.02 * rng.standard_normal(300)
        d = delta_covar("A", x, system=x).values
        ref = var_series(x, q=0.01).values - var_series(x, q=0.5).values
        gap_id = max(gap_id, float(np.max(np.abs(d - ref))))
        neg = -np.abs(x) - 1e-4
        s = 0.6 * neg + 0.01 * rng.standard_normal(300)
        m = rng.standard_normal((300, 2))
        a = asym_delta_covar("A", neg, m, system=s).values
        b = delta_covar("A", neg, m, system=s).values
        asym_exact &= bool(np.array_equal(a, b))
        gap_asym = max(gap_asym, float(np.max(np.abs(a - b))))
        s2 = 0.4 * x + 0.01 * rng.standard_normal(300)
        coes_exact &= bool(np.array_equal(delta_coes("A", x, m, system=s2, grid=1).values,
                                          delta_covar("A", x, m, system=s2).values))
    ok = report(capsys, 4, "co-risk degenerate identities", {
        "system = bank": (gap_id <= 1e-8, f"max |dCoVaR - (VaR1 - VaR50)| {gap_id:.1e} (<= 1e-8)"),
        "all-negative asymmetric": (asym_exact, f"exact={asym_exact} (max diff {gap_asym:.1e})"),
        "dCoES K=1": (coes_exact, f"exact={coes_exact}"),
    })
    assert ok


def _random_board(seed, n_banks, n=120):
    rng = np.random.default_rng(seed)
    dates = np.datetime64("2005-01-07", "D") + 7 * np.arange(n)
    picks = rng.choice(n, 25, replace=False)
    kinds = rng.choice(["event", "policy_action"], 25)
    tl = EventTimeline(tuple((dates[i], k) for i, k in zip(picks, kinds)))
    iev = build_iev(tl, dates)
    common = rng.standard_normal(n).cumsum()
    measures = {f"b{j}": {k: RiskSeries(f"b{j}", k, dates, common * rng.uniform()
                                        + rng.standard_normal(n).cumsum()) for k in KINDS}
                for j in range(n_banks)}
    return score_measures(measures, iev)


def _tournament(seed):
    panel_, state, _, events = simulate_system(SimConfig(n_banks=8, n_weeks=300), seed=seed)
    measures = compute_measures(panel_, state, KINDS, system_size=16)
    dates = np.unique(np.concatenate([np.asarray(s.dates) for per in measures.values()
                                      for s in per.values()]))
    board = score_measures(measures, build_iev(events, dates))
    nsv = board.total[board.measures.index("NSV")]
    beaten = sum(nsv > t for k, t in zip(board.measures, board.total) if k != "NSV")
    return beaten >= 3


def test_criterion_5_ranking(capsys):
    zero_sum = bounded = True
    for seed in range(20):
        n_banks = 1 + seed % 4
        board = _random_board(seed, n_banks)
        zero_sum &= bool(board.mcfadden.sum() == 0)
        for part in board.per_bank.values():
            zero_sum &= bool(part["mcfadden"].sum() == 0)
            bounded &= bool(np.all(np.abs(part["mcfadden"]) <= 4) and np.all(np.abs(part["granger"]) <= 4))

    # white-noise increments: the differenced test sees iid noise
    rej = rej_levels = 0
    for seed in range(1000):
        rng = np.random.default_rng(10_000 + seed)
        ex, ey = rng.standard_normal((2, 400))
        rej += granger_test(ex.cumsum(), ey.cumsum(), 2).causes
        rej_levels += granger_test(ex, ey, 2).causes
    size = rej / 1000

    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(400)
        y = np.r_[0.0, 0.6 * x[:-1]] + rng.standard_normal(400)
        hits += granger_test(x, y, 2).causes

    wins = sum(_tournament(seed) for seed in range(20))
    ok = report(capsys, 5, "ranking tournament", {
        "zero-sum": (zero_sum, "per pair per bank"),
        "bounds +/-4": (bounded, "per bank"),
        "Granger size": (abs(size - 0.05) <= 0.02,
                         f"{size:.3f} (0.05 +/- 0.02; over-differenced white-noise levels {rej_levels / 1000:.3f})"),
        "Granger power": (hits > 95, f"{hits}/100 (> 95)"),
        "NSV beats >= 3 of 4": (wins >= 14, f"{wins}/20 seeds (>= 14)"),
    })
    assert ok


def test_criterion_6_panel_estimator(capsys):
    gap = 0.0
    for seed in range(20):
        d = panel(seed)
        gap = max(gap, float(np.max(np.abs(prais_winsten_pcse(d, rho=0.0).coef - pooled_ols(d).coef))))

    beta = np.array([1.0, -0.5, 2.0])
    est = np.array([prais_winsten_pcse(panel(100 + s, rho=0.6, beta=tuple(beta))).coef for s in range(200)])
    mc_se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    z = np.abs(est.mean(axis=0) - beta) / mc_se

    # determinants layout on a 95-bank quarterly panel with an unbalanced start
    qp = quarters(Q=38, N=95, seed=5)
    sr = np.random.default_rng(5).standard_normal((38, 95))
    sr[:23, :82] = np.nan  # 13 banks observed throughout, the rest for the last 15 quarters
    spec = PanelSpec()
    data = assemble_panel(sr, qp, spec)
    res = prais_winsten_pcse(data)
    rows = res.rows(impacts(res, data))
    labels = [r[0] for r in rows]
    layout = (rows[0] == ["", "Coefficient [SE]", "Economic Impact (%)"]
              and all(labels[1 + 2 * k] == LABELS[n] and rows[2 + 2 * k][1].startswith("[")
                      for k, n in enumerate(spec.names))
              and all(rows[1 + 2 * k][2] != "" for k, n in enumerate(spec.names) if n != "const")
              and labels[-7:] == ["Number of Observations", "Number of Groups",
                                  "Min. Observations per Group", "Avg. Observations per Group",
                                  "Max. Observations per Group", "R-squared", "rho"]
              and rows[-6][1] == "95")
    imp = economic_impact(157.471, 0.01341, 11.08)
    ok = report(capsys, 6, "panel estimator", {
        "rho=0 vs pooled OLS": (gap <= 1e-6, f"max |diff| {gap:.1e} (<= 1e-6)"),
        "known coefficients": (bool(np.all(z < 2)), f"|bias|/MC SE {np.round(z, 2).tolist()} (< 2)"),
        "table layout": (layout, f"{len(spec.names)} regressors, groups={rows[-6][1]}, "
                                 f"min/max obs {rows[-5][1]}/{rows[-3][1]}"),
        "economic impact": (abs(imp - 19.06) <= 0.05, f"{imp:.3f} (19.06 +/- 0.05)"),
    })
    assert ok


def test_criterion_7_did_and_endogeneity(capsys):
    est = [diff_in_diff(*did_setup(seed, 5.0), "credit_derivatives")["post_x_top"] for seed in range(100)]
    bias = float(np.mean(est) - 5.0)
    wins = 0
    for seed in range(100):
        r = endogeneity_chain(*endo_design(seed, 0.8), force=True)
        wins += abs(r.beta_adjusted - 0.5) < abs(r.beta_naive - 0.5)
    ok = report(capsys, 7, "diff-in-diff and endogeneity", {
        "DiD interaction bias": (abs(bias) < 0.5, f"{bias:+.3f} over 100 seeds (|bias| < 0.5)"),
        "correction beats naive": (wins >= 95, f"{wins}/100 (>= 95)"),
    })
    assert ok


STAGES = ("simulate", "measure", "rank", "panel", "did", "report")


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv(cli.CACHE_ENV, raising=False)
    trees = []
    for run, threads in (("a", 1), ("b", 1), ("c", 2), ("d", 4)):
        out = tmp_path / run
        for stage in STAGES:
            assert cli.main([stage, "--out", str(out), "--seed", "11", "--threads", str(threads)]) == 0
        trees.append(_tree(out))
    same_rerun = trees[0] == trees[1]
    same_threads = trees[0] == trees[2] == trees[3]
    ok = report(capsys, 8, "determinism", {
        "rerun": (same_rerun, f"{len(trees[0])} files byte-identical" if same_rerun else "differs"),
        "threads 1/2/4": (same_threads, "byte-identical" if same_threads else "differs"),
    })
    assert ok

import numpy as np
import pytest

from oracles import beck_katz_balanced
from simdesigns import did_setup, endo_design, panel, quarters
from sysrisk.errors import SampleSizeError, SingularDesignError
from sysrisk.ingest import DERIVATIVE_FIELDS, QuarterPanel
from sysrisk.panelreg import (
    BALANCE_SHEET,
    SIZE_CONNECT_SUBST,
    PanelData,
    PanelSpec,
    aggregate_matrix,
    aggregate_systemic,
    assemble_panel,
    correction_term,
    diff_in_diff,
    economic_impact,
    endogeneity_chain,
    f_test,
    impacts,
    pooled_ols,
    prais_winsten_pcse,
    wald_test,
)


def test_rho_zero_reproduces_pooled_ols():
    d = panel(0)
    pw = prais_winsten_pcse(d, rho=0.0)
    ols = pooled_ols(d)
    np.testing.assert_allclose(pw.coef, ols.coef, atol=1e-12)
    assert pw.rho == 0.0


def test_rho_zero_pcse_close_to_ols_se():
    # homoskedastic, uncorrelated panels: PCSE and OLS SE agree on average
    ratios = []
    for seed in range(200):
        d = panel(seed)
        ratios.append(prais_winsten_pcse(d, rho=0.0).se / pooled_ols(d).se)
    assert np.all(np.abs(np.mean(ratios, axis=0) - 1) < 0.10)


def test_estimated_rho_on_white_noise_is_small():
    d = panel(1)
    pw = prais_winsten_pcse(d)
    assert abs(pw.rho) < 0.15
    np.testing.assert_allclose(pw.coef, pooled_ols(d).coef, atol=0.05)


def test_zero_noise_recovers_coefficients():
    d = panel(2, noise=0.0)
    pw = prais_winsten_pcse(d, rho=0.3)
    np.testing.assert_allclose(pw.coef, [1.0, -0.5, 2.0], atol=1e-8)
    assert pw.r_squared == pytest.approx(1.0, abs=1e-12)


def test_known_coefficients_recovered_within_two_mc_se():
    beta = np.array([1.0, -0.5, 2.0])
    est, rhos = [], []
    for seed in range(200):
        r = prais_winsten_pcse(panel(100 + seed, rho=0.6, beta=tuple(beta)))
        est.append(r.coef)
        rhos.append(r.rho)
    est = np.asarray(est)
    mc_se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - beta) < 2 * mc_se)
    assert 0.45 < np.mean(rhos) < 0.65


def test_pcse_matches_kronecker_form_on_balanced_panel():
    d = panel(3, n_groups=8, T=30, rho=0.4)
    r = prais_winsten_pcse(d, rho=0.4)
    u = r._yt - r._Xt @ r.coef
    # the kronecker form orders rows group-major, as the panel is sorted
    np.testing.assert_allclose(r.vcov, beck_katz_balanced(r._Xt, u, 8), rtol=1e-10)


def test_pcse_captures_cross_sectional_correlation():
    rng = np.random.default_rng(4)
    N, T = 15, 40
    common = rng.standard_normal((T, 1))
    x = np.repeat(rng.standard_normal((T, 1)), N, axis=1)  # regressor shared across groups
    y = 1 + x + 2 * common + 0.5 * rng.standard_normal((T, N))
    d = PanelData(np.repeat(np.arange(N), T), np.tile(np.arange(T), N), y.T.ravel(),
                  np.column_stack([x.T.ravel(), np.ones(N * T)]), ("x", "const"))
    assert prais_winsten_pcse(d, rho=0.0).stderr("x") > 2 * pooled_ols(d).stderr("x")


def test_unbalanced_group_counts():
    counts = [13] + [36] * 94
    d = panel(5, n_groups=95, counts=counts)
    r = prais_winsten_pcse(d)
    assert r.n_groups == 95 and r.n_obs == sum(counts)
    assert r.min_obs == 13 and r.max_obs == 36
    assert r.avg_obs == pytest.approx(sum(counts) / 95)
    assert sum(r.group_counts.values()) == r.n_obs
    assert np.all(r.se > 0) and abs(r.rho) < 1


def test_few_common_dates_fall_back_to_diagonal():
    # two groups that never overlap in time contribute no covariance
    d = panel(6, n_groups=2, T=20)
    shifted = PanelData(d.groups, d.periods + np.where(d.groups == "g01", 20, 0), d.y, d.X, d.names)
    r = prais_winsten_pcse(shifted, rho=0.0)
    u = r._yt - r._Xt @ r.coef
    bread = np.linalg.inv(r._Xt.T @ r._Xt)
    s = np.where(shifted.groups == "g00", np.mean(u[:20] ** 2), np.mean(u[20:] ** 2))
    expected = bread @ (r._Xt * s[:, None]).T @ r._Xt @ bread
    np.testing.assert_allclose(r.vcov, expected, rtol=1e-10)


def test_rank_deficiency_and_rho_clamp():
    d = panel(7)
    bad = PanelData(d.groups, d.periods, d.y, np.column_stack([d.X, 2 * d.X[:, 0]]), d.names + ("dup",))
    with pytest.raises(SingularDesignError, match="dup|x0"):
        prais_winsten_pcse(bad)
    with pytest.warns(RuntimeWarning, match="clamped"):
        r = prais_winsten_pcse(d, rho=1.2)
    assert r.rho == pytest.approx(0.99)


def test_row_order_does_not_matter():
    d = panel(8, rho=0.5)
    perm = np.random.default_rng(8).permutation(d.n_obs)
    shuffled = PanelData(d.groups[perm], d.periods[perm], d.y[perm], d.X[perm], d.names)
    np.testing.assert_allclose(prais_winsten_pcse(shuffled).coef, prais_winsten_pcse(d).coef, atol=1e-12)


def test_economic_impact():
    assert economic_impact(157.471, 0.01341, 11.08) == pytest.approx(19.06, abs=0.05)
    assert economic_impact(157.471, 0.014, 11.08) == pytest.approx(19.06, rel=0.05)
    assert economic_impact(0.0, 3.0, 2.0) == 0.0
    assert economic_impact(2.0, 0.5, 10.0) == pytest.approx(10.0)
    assert economic_impact(4.0, 0.5, 10.0) == pytest.approx(2 * economic_impact(2.0, 0.5, 10.0))
    with pytest.raises(ValueError):
        economic_impact(1.0, 1.0, 0.0)


def test_f_and_wald_tests():
    d = panel(9, beta=(0.0, 0.0, 1.0))
    r = prais_winsten_pcse(d)
    F, p = f_test(r, ["x0", "x1"])
    W, pw = wald_test(r, ["x0", "x1"])
    assert 0 < p <= 1 and 0 < pw <= 1
    d = panel(9, beta=(0.5, 0.0, 1.0))
    assert f_test(prais_winsten_pcse(d), ["x0", "x1"])[1] < 1e-6


def test_aggregate_systemic():
    a, b = np.array([1.0, 2.0, 3.0]), np.array([5.0, np.nan, 7.0])
    np.testing.assert_array_equal(aggregate_systemic({"a": a, "b": b}, "a"), b)
    z = np.zeros(4)
    np.testing.assert_array_equal(aggregate_systemic({"a": z, "b": z, "c": z}, "b"), z)
    with pytest.raises(ValueError):
        aggregate_systemic({"a": a}, "a")
    sr = np.random.default_rng(10).standard_normal((6, 5))
    agg = aggregate_matrix(sr, list("abcde"))
    np.testing.assert_allclose(agg.sum(axis=1), 4 * sr.sum(axis=1))


def test_assemble_panel_layout_and_lags():
    qp = quarters()
    sr = np.random.default_rng(1).standard_normal((12, 10))
    sr[5, 3] = np.nan
    spec = PanelSpec()
    d = assemble_panel(sr, qp, spec)
    assert d.names == spec.names
    assert d.names.index("aggregate_sr_l1") == len(SIZE_CONNECT_SUBST) + len(BALANCE_SHEET)
    assert d.n_obs == 10 * 10 - 1  # two lags drop two quarters, one missing cell
    row = np.flatnonzero((d.groups == "B02") & (d.periods == 6))[0]
    assert d.y[row] == sr[6, 2]
    assert d.column("leverage")[row] == qp.get("leverage")[5, 2]
    agg = aggregate_matrix(sr, qp.bank_ids)
    assert d.column("aggregate_sr_l2")[row] == agg[4, 2]
    assert d.column("credit_derivatives")[row] == qp.get("credit_derivatives")[5, 2]
    assert spec.without_derivatives().names[-1] == "const"
    assert not set(DERIVATIVE_FIELDS) & set(spec.without_derivatives().names)


def test_panel_spec_invariants():
    with pytest.raises(ValueError):
        PanelSpec(z_vars=("leverage", "leverage"))
    with pytest.raises(ValueError):
        PanelSpec(lag=0)


def test_table_layout_csv(tmp_path):
    d = panel(11, n_groups=5, counts=[13, 36, 36, 36, 36])
    r = prais_winsten_pcse(d)
    imp = impacts(r, d)
    r.to_csv(tmp_path / "t.csv", impacts=imp)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",Coefficient [SE],Economic Impact (%)"
    assert lines[1].startswith("x0,") and lines[2].startswith(",[")
    assert "Number of Groups,5," in lines
    assert "Min. Observations per Group,13," in lines
    assert "Max. Observations per Group,36," in lines
    assert "*" not in "".join(lines)
    assert "***" in r.summary()


def test_did_recovers_interaction():
    est = []
    for seed in range(100):
        sr, qp = did_setup(seed, 5.0)
        est.append(diff_in_diff(sr, qp, "credit_derivatives")["post_x_top"])
    assert abs(np.mean(est) - 5.0) < 0.5


def test_did_size_under_null():
    rej = 0
    for seed in range(100):
        sr, qp = did_setup(200 + seed, 0.0, controls=False)
        rej += diff_in_diff(sr, qp, "credit_derivatives", controls=()).p_value("post_x_top") < 0.05
    assert rej <= 12


def test_did_invariant_to_level_shift():
    sr, qp = did_setup(1, 5.0)
    a = diff_in_diff(sr, qp, "credit_derivatives")
    b = diff_in_diff(sr + 100.0, qp, "credit_derivatives")
    assert b["post_x_top"] == pytest.approx(a["post_x_top"], abs=1e-8)


def test_did_errors():
    sr, qp = did_setup(2, 5.0)
    flat = QuarterPanel(qp.quarters, qp.bank_ids, {**qp.fields, "credit_derivatives": np.ones((12, 95))})
    with pytest.raises(SingularDesignError):
        diff_in_diff(sr, flat, "credit_derivatives")
    with pytest.raises(ValueError, match="quarter"):
        diff_in_diff(sr, qp, "credit_derivatives", post="2012Q1")
    one = QuarterPanel(qp.quarters, qp.bank_ids, {**qp.fields, "credit_derivatives": np.full((12, 95), np.nan)})
    with pytest.raises(ValueError):
        diff_in_diff(sr, one, "credit_derivatives")


def test_endogeneity_correction_beats_naive():
    beta, wins, naive, adjusted = 0.5, 0, [], []
    for seed in range(100):
        adj, dh = endo_design(seed, 0.8)
        r = endogeneity_chain(adj, dh, force=True)
        naive.append(r.beta_naive)
        adjusted.append(r.beta_adjusted)
        wins += abs(r.beta_adjusted - beta) < abs(r.beta_naive - beta)
    assert wins >= 95
    adjusted = np.asarray(adjusted)
    mc_se = adjusted.std(ddof=1) / np.sqrt(adjusted.size)
    assert abs(adjusted.mean() - beta) < 2 * mc_se
    assert abs(np.mean(naive) - beta) > 10 * mc_se


def test_endogeneity_detects_correlation():
    r = endogeneity_chain(*endo_design(0, 0.8))
    assert r.significant and r.omega == pytest.approx(0.8, abs=0.1)


def test_exogenous_holdings_rarely_flagged():
    flagged = sum(endogeneity_chain(*endo_design(seed, 0.0, N=30, T=20)).significant for seed in range(100))
    assert flagged <= 12


def test_uncorrected_rho_reproduces_naive_slope():
    # with the least-squares AR(1) slope the correction term is orthogonal to the lag
    adj, dh = endo_design(3, 0.8)
    for fe in (True, False):
        r = endogeneity_chain(adj, dh, fixed_effects=fe, rho_correction="none", force=True)
        assert r.beta_adjusted == pytest.approx(r.beta_naive, abs=1e-10)


def test_correction_term_with_zero_rho_is_demeaned():
    dh = np.random.default_rng(4).standard_normal(50)
    np.testing.assert_allclose(correction_term(dh, np.roll(dh, 1), dh.mean(), 0.0), dh - dh.mean())


def test_endogeneity_errors():
    with pytest.raises(SampleSizeError):
        endogeneity_chain(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        endogeneity_chain(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError, match="correction"):
        endogeneity_chain(*endo_design(0, 0.5), rho_correction="bogus", force=True)

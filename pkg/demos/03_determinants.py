# coding: utf-8

# # Bank characteristics behind systemic risk
#
# Quarterly net Shapley values regressed on lagged balance-sheet ratios,
# derivative holdings and the aggregate risk of the other banks, with an
# AR(1) correction and panel-corrected standard errors.

from sysrisk import (
    PanelSpec,
    SimConfig,
    assemble_panel,
    compute_measures,
    diff_in_diff,
    prais_winsten_pcse,
    quarterly_matrix,
    simulate_system,
)
from sysrisk.panelreg import impacts

panel, state, qp, events = simulate_system(SimConfig(n_banks=8, n_weeks=400), seed=5)
measures = compute_measures(panel, state, ("NSV",))
sr = quarterly_matrix(measures, "NSV", qp)
print(sr.shape[0], "quarters x", sr.shape[1], "banks")


# The full specification has more regressors than this small system can
# support, so keep the derivative holdings and one balance-sheet ratio.

spec = PanelSpec(y_vars=(), z_vars=("leverage",), aggregate_lags=(1,))
data = assemble_panel(sr, qp, spec)
res = prais_winsten_pcse(data)
print(res.summary())
for name, v in impacts(res, data).items():
    print(f"{name:28s} {v:8.2f} %")


# Difference in differences: banks with the largest credit-derivative
# holdings before the crisis against the rest.

q = qp.quarters
did = diff_in_diff(sr, qp, "credit_derivatives", rank_quarters=q[1:3], pre=q[len(q) // 2 - 1],
                   post=q[len(q) // 2 + 1], top_q=0.75, bottom_q=0.75, controls=())
print(did.summary())

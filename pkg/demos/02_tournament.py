# coding: utf-8

# # Which measure tracks crisis events best?
#
# Each measure is scored pairwise per bank: +1 to the measure with the
# higher McFadden R2 against the event variable, and +1 for Granger
# causing another measure.

import numpy as np

from sysrisk import SimConfig, build_iev, compute_measures, score_measures, simulate_system

panel, state, _, events = simulate_system(SimConfig(), seed=3)
measures = compute_measures(panel, state)
dates = np.unique(np.concatenate([s.dates for per in measures.values() for s in per.values()]))
iev = build_iev(events, dates)
print("event weeks:", int(np.sum(iev.values == 1)), " policy weeks:", int(np.sum(iev.values == -1)))

board = score_measures(measures, iev)
for row in board.rows():
    print(",".join(row))


# On this generator the state variables move ahead of the stress window,
# and the co-risk measures that condition on them directly tend to lead.

for seed in range(5):
    p, st, _, ev = simulate_system(SimConfig(), seed=seed)
    ms = compute_measures(p, st)
    d = np.unique(np.concatenate([s.dates for per in ms.values() for s in per.values()]))
    b = score_measures(ms, build_iev(ev, d))
    print(seed, dict(zip(b.measures, b.total.tolist())))

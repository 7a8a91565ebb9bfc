"""
When the claim cannot be hedged
===============================

Here the traded payoff only depends on the Brownian path after a time tau,
so its quoted price is frozen before tau.  The volatility matrix is zero on
[0, tau) and there is no strategy in the traded asset that produces the
claim; the library refuses instead of returning a meaningless ratio.
"""
import numpy as np

from impact_hedge import IncompleteMarketError, Scenario, completeness_scan, replicate, simulate_paths, solve_price
from impact_hedge.dynamics import state_grid

s = Scenario.delayed(T=1.0)
m = solve_price(s)
t, b = state_grid(np.linspace(0, 1, 11), [0.0], 1)
scan = completeness_scan(m, t, b)
for ti, sv in zip(scan.t, scan.min_sv):
    print(f"t={ti:.1f}  smallest singular value={sv:.0f}")
print("verdict:", scan.verdict)

try:
    replicate(simulate_paths(s, 16, 10, 1), m)
except IncompleteMarketError as exc:
    print("replication refused:", exc)

"""
Discrete replication of a call
==============================

The investor holds H units of the traded asset, rebalanced on a grid.  A
linear claim is replicated exactly at any step size; a call leaves a
discretisation error that shrinks as the grid is refined.
"""
from impact_hedge import (PiecewiseLinear, Scenario, SeparableClaim, UtilitySpec, convergence_study,
                          replicate, simulate_paths, solve_price)

u = UtilitySpec.exponential(1.0)
linear = Scenario(J=1, T=1.0, x=0.0, utility=u, claim=SeparableClaim.single(PiecewiseLinear.linear()))
m = solve_price(linear)
rep = replicate(simulate_paths(linear, 16, 1000, 1), m)
print(f"linear claim, 16 steps: max |terminal error| = {rep.max_abs:.2e}")

call = Scenario(J=1, T=1.0, x=0.0, utility=u, claim=SeparableClaim.single(PiecewiseLinear.call(0.0)))
table = convergence_study(call, [16, 32, 64, 128, 256], 2000, 20240607)
print(table.to_csv())

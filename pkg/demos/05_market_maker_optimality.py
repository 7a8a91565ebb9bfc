"""
The market maker's position is optimal
======================================

Taking the other side of the investor's hedge is the market maker's best
response: perturbing that holding by eps times a bounded process lowers the market maker's
expected utility.  The comparison uses the same simulated paths for every
eps, so Delta(0) is exactly zero and the standard errors are small.
"""
from impact_hedge import (PiecewiseLinear, Scenario, SeparableClaim, UtilitySpec, mm_optimality_check,
                          simulate_paths, solve_price)

s = Scenario(J=1, T=1.0, x=0.0, utility=UtilitySpec.exponential(1.0),
             claim=SeparableClaim.single(PiecewiseLinear.call(0.0)))
m = solve_price(s)
rep = mm_optimality_check(simulate_paths(s, 64, 10_000, 20240607), m)
for r in rep.rows:
    print(f"{r.shape:>8}  eps={r.eps:5.3f}  Delta={r.delta:+.3e}  se={r.stderr:.1e}")
for name, ok in rep.checks.items():
    print(f"{'ok  ' if ok else 'FAIL'} {name}")

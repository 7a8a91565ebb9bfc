"""
Price impact and the volatility matrix
======================================

Once the claim is sold, the quoted price of the traded asset is an
expectation under the market maker's tilted measure.  For a call on asset 1
and a put on asset 2 the volatility matrix stays diagonal with entries above
one: the investor's position adds to the quoted volatility.
"""
import numpy as np

from impact_hedge import (PiecewiseLinear, Scenario, SeparableClaim, UtilitySpec, hedge_ratio,
                          price_fn, solve_price, vol_matrix)

claim = SeparableClaim((PiecewiseLinear.call(0.0), PiecewiseLinear.put(0.0)), (0.7, 0.3))
s = Scenario(J=2, T=1.0, x=0.0, utility=UtilitySpec.exponential(1.0), claim=claim)
m = solve_price(s)
print(f"price of the basket: {m.p:.6f}")

t = np.array([0.0, 0.5, 0.9])
b = np.zeros((3, 2))
S = price_fn(m, t, b)
sig = vol_matrix(m, t, b).entries
hr = hedge_ratio(m, t, b)
for k in range(3):
    print(f"t={t[k]:.1f}  S~={np.round(S[k], 4)}  diag(sigma~)={np.round(np.diag(sig[k]), 4)}"
          f"  off-diag={sig[k, 0, 1]:.1e}  H={np.round(hr.H[k], 4)}")

# %%
# Moving along asset 1: the impact on the quote is largest near the strike
# and fades deep in or out of the money.
bb = np.column_stack([np.linspace(-2, 2, 9), np.zeros(9)])
sig = vol_matrix(m, np.zeros(9), bb).entries
for row, v in zip(bb, sig[:, 0, 0]):
    print(f"b1={row[0]:+.1f}  sigma11={v:.4f}")

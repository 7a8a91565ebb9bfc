"""
Pricing a call against a risk-averse market maker
=================================================

The market maker takes the other side of the claim and quotes the price that
leaves its expected utility unchanged.  With exponential utility that price
is the mean of the payoff under an exponential tilt, which sits above the
plain expectation for any convex claim.
"""
from dataclasses import replace

from scipy.stats import norm

from impact_hedge import PiecewiseLinear, Scenario, SeparableClaim, UtilitySpec, solve_price

# at-the-money call on one Bachelier asset, horizon one year
for gamma in [0.01, 0.5, 1.0, 2.0, 4.0]:
    s = Scenario(J=1, T=1.0, x=0.0, utility=UtilitySpec.exponential(gamma),
                 claim=SeparableClaim.single(PiecewiseLinear.call(0.0)))
    m = solve_price(s)
    print(f"gamma={gamma:5.2f}  price={m.p:.6f}")

print(f"plain expectation    {norm.pdf(0.0):.6f}")

# %%
# A mixture of exponentials no longer has a closed form; the scalar price
# equation is solved by bracketing and Brent's method, and the solver checks
# that the root is unique.
mix = Scenario(J=1, T=1.0, x=0.0, utility=UtilitySpec(((1.0, 0.5), (0.5, 2.0))),
               claim=SeparableClaim.single(PiecewiseLinear.call(0.0)))
m = solve_price(mix)
print(f"mixture price={m.p:.6f}")
for x in [-2.0, 0.0, 2.0]:
    # wealth matters once the risk aversion is not constant
    print(f"  wealth {x:+.1f}: price={solve_price(replace(mix, x=x)).p:.6f}")

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from impact_hedge import (NumericsConfig, PiecewiseLinear, Scenario, SeparableClaim,
                          UtilitySpec, solve_price)


def make_scenario(payoffs, weights=None, gamma=1.0, T=1.0, x=0.0, terms=None, **numerics):
    weights = weights or [1.0] * len(payoffs)
    utility = UtilitySpec(tuple(terms)) if terms else UtilitySpec.exponential(gamma)
    return Scenario(J=len(payoffs), T=T, x=x, utility=utility,
                    claim=SeparableClaim(tuple(payoffs), tuple(weights)),
                    numerics=NumericsConfig(**numerics))


def linear_scenario(gamma=1.0, T=1.0):
    return make_scenario([PiecewiseLinear.linear()], gamma=gamma, T=T)


def call_scenario(strike=0.0, gamma=1.0, T=1.0):
    return make_scenario([PiecewiseLinear.call(strike)], gamma=gamma, T=T)


def basket_scenario(gamma=1.0):
    return make_scenario([PiecewiseLinear.call(0.0), PiecewiseLinear.put(0.0)], [0.7, 0.3], gamma=gamma)


def mixture_scenario():
    return make_scenario([PiecewiseLinear.call(0.2), PiecewiseLinear.put(-0.1)], [0.6, 0.4],
                         terms=[(1.0, 0.5), (0.5, 2.0)])


ALL_SCENARIOS = {
    "linear": linear_scenario,
    "call": call_scenario,
    "call-otm-g2": lambda: call_scenario(strike=0.5, gamma=2.0, T=0.5),
    "put": lambda: make_scenario([PiecewiseLinear.put(0.3)], gamma=0.5),
    "basket": basket_scenario,
    "mixture": mixture_scenario,
    "three-asset": lambda: make_scenario([PiecewiseLinear.call(0.0), PiecewiseLinear.call(0.5),
                                          PiecewiseLinear.linear(0.5, 0.1)], [0.5, 0.3, 0.2]),
    "constant": lambda: make_scenario([PiecewiseLinear.constant(0.3)]),
}


@pytest.fixture(scope="session")
def priced():
    """Solved pricing measures keyed by scenario name."""
    return {k: solve_price(f()) for k, f in ALL_SCENARIOS.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_states(rng, n, J, T=1.0):
    t = rng.uniform(0.0, 0.95 * T, n)
    b = rng.normal(0.0, np.sqrt(T), (n, J))
    return t, b


def tilted_1d(b, tau, h, strike=0.0, gamma=1.0):
    """E[h(Z) e^{gamma (Z-K)^+}] / E[e^{gamma (Z-K)^+}] for Z ~ N(b, tau), by adaptive quadrature."""
    s = np.sqrt(tau)
    w = lambda z: np.exp(gamma * max(z - strike, 0.0)) * norm.pdf(z, b, s)
    kw = dict(points=[strike], limit=200, epsabs=1e-13, epsrel=1e-12)
    num = integrate.quad(lambda z: h(z) * w(z), b - 14 * s, b + 14 * s, **kw)[0]
    den = integrate.quad(w, b - 14 * s, b + 14 * s, **kw)[0]
    return num / den


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

import logging

import numpy as np
import pytest

from impact_hedge import IncompleteMarketError, Scenario, hedge_ratio, solve_price
from impact_hedge.hedging import clark_ocone_integrand, solve_ratio

from conftest import random_states, tilted_1d


def test_linear_claim_holds_one_unit(priced, rng):
    t, b = random_states(rng, 30, 1)
    hr = hedge_ratio(priced["linear"], t, b)
    np.testing.assert_allclose(hr.H, 1.0, atol=1e-12)
    np.testing.assert_allclose(hr.eta, 1.0, atol=1e-12)


def test_call_ratio_bounds_and_fd(priced, rng):
    m = priced["call"]
    t, b = random_states(rng, 200, 1)
    hr = hedge_ratio(m, t, b, fd_check=True)
    assert hr.H.min() >= 0 and hr.H.max() <= 1
    assert np.abs(hr.H - hr.H_fd).max() < 1e-6
    eta0 = clark_ocone_integrand(m, 0.0, [0.0])[0, 0]
    assert 0 < eta0 < 1


@pytest.mark.parametrize("t,b", [(0.0, 0.0), (0.4, -0.7), (0.8, 0.9)])
def test_integrand_is_gradient_of_claim_price(priced, t, b):
    # independent oracle: adaptive quadrature of the tilted claim price, then differencing
    h = 1e-4
    ghat = lambda bb: tilted_1d(bb, 1 - t, lambda z: max(z, 0.0))
    fd = (ghat(b + h) - ghat(b - h)) / (2 * h)
    assert clark_ocone_integrand(priced["call"], t, [b])[0, 0] == pytest.approx(fd, abs=1e-6)


@pytest.mark.parametrize("name", ["basket", "mixture", "three-asset"])
def test_linear_system_residual(priced, rng, name):
    m = priced[name]
    t, b = random_states(rng, 100, m.scenario.J)
    hr = hedge_ratio(m, t, b, diagonal=False)
    assert np.abs(np.einsum("nji,nj->ni", hr.sigma, hr.H) - hr.eta).max() <= 1e-10
    assert hr.cond.min() > 0.5


def test_diagonal_fast_path_matches_solve(priced, rng):
    m = priced["basket"]
    t, b = random_states(rng, 50, 2)
    full = hedge_ratio(m, t, b, diagonal=False).H
    fast = hedge_ratio(m, t, b, diagonal=True).H
    assert np.abs(full - fast).max() < 1e-12


def test_solve_ratio_transpose():
    sigma = np.array([[[2.0, 1.0], [0.0, 1.0]]])
    eta = np.array([[4.0, 3.0]])
    H = solve_ratio(sigma, eta)
    np.testing.assert_allclose(sigma[0].T @ H[0], eta[0])


def test_delayed_refuses_before_tau():
    m = solve_price(Scenario.delayed())
    with pytest.raises(IncompleteMarketError, match=r"\[0, 0.5\)"):
        hedge_ratio(m, [0.1, 0.7], [[0.0], [0.0]])
    hr = hedge_ratio(m, [0.6, 0.9], [[0.0], [1.0]])
    np.testing.assert_allclose(hr.H, 1.0, atol=1e-12)


def test_near_singular_warning(priced, caplog):
    from dataclasses import replace
    m = priced["call"]
    # raising the refusal threshold above sigma~ turns a healthy state into a refusal
    vs = m.scenario
    strict = replace(vs, scenario=replace(vs.scenario, numerics=replace(vs.numerics, sv_tolerance=10.0)))
    with pytest.raises(IncompleteMarketError):
        hedge_ratio(replace(m, scenario=strict), 0.0, [0.0])
    with caplog.at_level(logging.WARNING):
        hedge_ratio(m, 0.0, [0.0])
    assert not caplog.records

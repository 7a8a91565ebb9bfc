import numpy as np
import pytest

from impact_hedge import (IncompleteMarketError, Scenario, convergence_study,
                          martingale_residual_check, mm_optimality_check, replicate,
                          simulate_paths, solve_price)
from impact_hedge.simulator import PathBundle, walk

from conftest import call_scenario


def test_paths_are_brownian():
    s = call_scenario()
    bundle = simulate_paths(s, 8, 20_000, 7)
    inc = bundle.increments
    assert inc.shape == (20_000, 8, 1)
    assert abs(inc.mean()) < 4 * np.sqrt(bundle.dt / inc.size)
    assert inc.var() == pytest.approx(bundle.dt, rel=0.03)
    lv = bundle.levels
    assert lv.shape == (20_000, 9, 1) and np.all(lv[:, 0] == 0)
    assert lv[:, -1].var() == pytest.approx(1.0, rel=0.03)


def test_paths_reproducible_and_prefix_stable():
    s = call_scenario()
    a = simulate_paths(s, 16, 50, 99)
    b = simulate_paths(s, 16, 50, 99)
    c = simulate_paths(s, 16, 10, 99)
    assert np.array_equal(a.increments, b.increments)
    assert np.array_equal(a.increments[:10], c.increments)
    assert not np.array_equal(a.increments, simulate_paths(s, 16, 50, 100).increments)


def test_coarsen():
    s = call_scenario()
    a = simulate_paths(s, 8, 5, 1)
    c = a.coarsen()
    assert c.steps == 4
    np.testing.assert_allclose(c.levels, a.levels[:, ::2], atol=1e-15)
    with pytest.raises(ValueError):
        simulate_paths(s, 3, 5, 1).coarsen()


def test_linear_replication_exact(priced):
    m = priced["linear"]
    rep = replicate(simulate_paths(m.scenario, 16, 1000, 3), m)
    assert rep.max_abs <= 1e-10


def test_thread_count_invariance(priced, monkeypatch):
    m = priced["basket"]
    bundle = simulate_paths(m.scenario, 8, 64, 5)
    one = replicate(bundle, m, threads=1).terminal_errors
    four = replicate(bundle, m, threads=4).terminal_errors
    assert np.array_equal(one, four)
    monkeypatch.setenv("IMPACT_HEDGE_THREADS", "3")
    assert np.array_equal(replicate(bundle, m).terminal_errors, one)


def test_replication_error_shrinks_for_call(priced):
    table = convergence_study(priced["call"].scenario, [16, 64, 256], 500, 11, m=priced["call"])
    assert table.rms[0] > table.rms[1] > table.rms[2]
    assert table.monotone
    assert table.to_csv().startswith("steps,rms,max_abs\n16,")
    with pytest.raises(ValueError):
        convergence_study(priced["call"].scenario, [64, 16], 10, 1)


def test_mixture_replication(priced):
    m = priced["mixture"]
    rep = replicate(simulate_paths(m.scenario, 64, 300, 2), m)
    assert rep.rms < 0.1
    assert abs(rep.terminal_errors.mean()) < 4 * rep.terminal_errors.std() / np.sqrt(300) + 1e-3


def test_martingale_residuals(priced):
    lin = priced["linear"]
    res = martingale_residual_check(simulate_paths(lin.scenario, 16, 50, 1), lin)
    assert res.exact and res.passed
    call = priced["call"]
    res = martingale_residual_check(simulate_paths(call.scenario, 64, 500, 1), call)
    assert not res.exact and 1.5 <= res.ratio <= 3.0 and res.passed


def test_optimality_small(priced):
    m = priced["call"]
    rep = mm_optimality_check(simulate_paths(m.scenario, 32, 4000, 20240607), m)
    assert all(r.delta == 0.0 for r in rep.rows if r.eps == 0.0)
    top = [r for r in rep.rows if r.eps == 0.5]
    assert all(r.delta < 0 for r in top)


def test_delayed_replication_refused():
    m = solve_price(Scenario.delayed())
    with pytest.raises(IncompleteMarketError, match="integral"):
        replicate(simulate_paths(m.scenario, 8, 10, 1), m)


def test_store_trajectories(priced):
    m = priced["call"]
    bundle = simulate_paths(m.scenario, 4, 3, 1)
    rep = replicate(bundle, m, store=True)
    lines = rep.trajectories_csv(bundle.times).splitlines()
    assert lines[0] == "path,k,t,b1,S1,H1,W" and len(lines) == 1 + 3 * 5
    assert rep.wealth_paths[:, 0].tolist() == [m.p] * 3
    with pytest.raises(ValueError):
        replicate(bundle, m).trajectories_csv(bundle.times)


def test_bad_sizes():
    with pytest.raises(ValueError):
        simulate_paths(call_scenario(), 0, 10, 1)

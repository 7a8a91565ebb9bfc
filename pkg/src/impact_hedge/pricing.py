"""Equilibrium price of the claim and the pricing measure it induces.

The price ``p`` solves ``psi(p) = E[(p - g) U'(x + p - g)] = 0``; the pricing
measure then has density proportional to ``U'(x + p - g)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .gauss import mc_stream, quad_rule, tensor_nodes
from .model import SeparableClaim, ValidatedScenario, validate_scenario
from .tilt import moments, term_moments


class BracketError(RuntimeError):
    pass


class NonUniquePriceError(RuntimeError):
    def __init__(self, roots):
        self.roots = tuple(float(r) for r in roots)
        super().__init__(f"price equation has {len(self.roots)} roots: {self.roots}")


@dataclass(frozen=True)
class TiltedMeasure:
    """Solved price plus the un-normalised pricing density ``z -> U'(x + p - G(z))``."""

    p: float
    scenario: ValidatedScenario
    norm0: float
    closed_form: float = float("nan")
    roots: tuple = field(default=())

    def weight(self, z):
        s = self.scenario
        return s.utility.marginal(s.x + self.p - s.claim.value(z))

    def log_weight(self, z):
        s = self.scenario
        return s.utility.log_marginal(s.x + self.p - s.claim.value(z))


def tilt_weight(m: TiltedMeasure, z):
    return m.weight(z)


def _term_stats(vs: ValidatedScenario, rates):
    """log E[exp(r G)] and E[G exp(r G)] / E[exp(r G)] at t = 0, b = 0, per rate."""
    claim = vs.claim
    if isinstance(claim, SeparableClaim):
        tm = term_moments(claim, rates, 0.0, np.zeros(vs.J), vs.T)
        w = np.asarray(claim.weights)
        return tm.log_e0.sum(-1)[0], (tm.phi * w).sum(-1)[0]
    if vs.J <= 3:
        Z, nu = tensor_nodes(np.zeros(vs.J), vs.T, quad_rule(vs.numerics.quad_order))
    else:
        n = int(vs.numerics.mc_paths)
        Z = np.sqrt(vs.T) * mc_stream(vs.numerics.seed, "price").standard_normal((n, vs.J))
        nu = np.full(n, 1.0 / n)
    G = claim.value(Z)
    out_log, out_mean = [], []
    for r in np.atleast_1d(rates):
        e = r * G
        top = e.max()
        v = nu * np.exp(e - top)
        out_log.append(np.log(v.sum()) + top)
        out_mean.append(v @ G / v.sum())
    return np.array(out_log), np.array(out_mean)


class PriceEquation:
    """psi(p) = sum_i c_i exp(-gamma_i (x + p)) M_i (p - mu_i).

    ``M_i = E[exp(gamma_i G)]`` and ``mu_i`` is the mean of ``G`` under the
    ``exp(gamma_i G)`` tilt.  Each term carries the sign of ``p - mu_i``, so
    every root lies in ``[min mu_i, max mu_i]``.
    """

    def __init__(self, vs: ValidatedScenario):
        u = vs.utility
        self.x = vs.x
        self.c = u.weights
        self.gamma = u.rates
        self.log_m, self.mu = _term_stats(vs, self.gamma)

    def _logs(self, p):
        return np.log(self.c) - self.gamma * (self.x + p) + self.log_m

    def __call__(self, p: float) -> float:
        return float(np.sum(np.exp(self._logs(p)) * (p - self.mu)))

    def scaled(self, p: float) -> float:
        # same sign as psi, without overflow
        lg = self._logs(p)
        return float(np.sum(np.exp(lg - lg.max()) * (p - self.mu)))

    def log_norm(self, p: float) -> float:
        lg = self._logs(p)
        top = lg.max()
        return float(top + np.log(np.exp(lg - top).sum()))


def _bracket(f, p0: float, doublings: int):
    f0 = f(p0)
    if f0 == 0:
        return p0, p0
    step = max(1.0, abs(p0)) * 1e-3
    direction = 1.0 if f0 < 0 else -1.0
    for _ in range(int(doublings)):
        p1 = p0 + direction * step
        if np.sign(f(p1)) != np.sign(f0):
            return (p0, p1) if p0 < p1 else (p1, p0)
        step *= 2.0
    raise BracketError(f"no sign change within {doublings} doublings from {p0}")


def solve_price(s, scan_points: int = 2001) -> TiltedMeasure:
    """Root of the price equation.

    The bracket is grown geometrically from the untilted mean ``E[G]``; the
    root is refined with Brent's method.  When the utility mixes several
    rates the interval holding all roots is scanned and
    :class:`NonUniquePriceError` is raised if more than one root turns up.
    """
    vs = validate_scenario(s)
    cfg = vs.numerics
    eq = PriceEquation(vs)
    _, mean0 = _term_stats(vs, [0.0])
    lo, hi = _bracket(eq.scaled, float(mean0[0]), cfg.bracket_doublings)
    if lo == hi:
        p = lo
    else:
        p = brentq(eq.scaled, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    roots = (p,)

    closed = float("nan")
    if vs.utility.single_rate is not None:
        closed = float(eq.mu[0])
        if abs(closed - p) > cfg.root_tolerance:
            raise RuntimeError(f"root {p} disagrees with exponential closed form {closed}")
    else:
        a, b = float(eq.mu.min()), float(eq.mu.max())
        if b > a:
            grid = np.linspace(a, b, scan_points)
            vals = np.array([eq.scaled(q) for q in grid])
            found = []
            for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0):
                if vals[k] == 0:
                    found.append(grid[k])
                elif vals[k + 1] != 0:
                    found.append(brentq(eq.scaled, grid[k], grid[k + 1], xtol=1e-15))
            found = sorted(set(found) | {p})
            merged = [found[0]]
            for r in found[1:]:
                if r - merged[-1] > 1e3 * cfg.root_tolerance:
                    merged.append(r)
            if len(merged) > 1:
                raise NonUniquePriceError(merged)
    return TiltedMeasure(p=float(p), scenario=vs, norm0=float(np.exp(eq.log_norm(p))),
                         closed_form=closed, roots=roots)


@dataclass(frozen=True)
class ConsistencyReport:
    p: float
    expectation_gap: float      # |E~[g] - p|
    psi_residual: float         # |E[(p - g) U'(x + p - g)]|, closed-form route
    psi_residual_quad: float    # same, by direct quadrature (nan when J > 3)
    s0: tuple                   # E~[f]
    tolerance: float

    @property
    def ok(self) -> bool:
        return (self.expectation_gap <= max(self.tolerance, 1e-8)
                and self.psi_residual <= self.tolerance)

    def as_dict(self) -> dict:
        return dict(p=self.p, expectation_gap=self.expectation_gap,
                    psi_residual=self.psi_residual, psi_residual_quad=self.psi_residual_quad,
                    s0=list(self.s0), ok=self.ok)


def consistency_report(m: TiltedMeasure) -> ConsistencyReport:
    vs = m.scenario
    mom = moments(m, 0.0, np.zeros(vs.J))
    eq = PriceEquation(vs)
    quad = float("nan")
    if vs.J <= 3:
        Z, nu = tensor_nodes(np.zeros(vs.J), vs.T, quad_rule(vs.numerics.quad_order),
                             vs.claim.breakpoints)
        quad = abs(float(nu @ ((m.p - vs.claim.value(Z)) * m.weight(Z))))
    if vs.traded.kind == "delayed":
        s0 = (0.0,)
    else:
        s0 = tuple(float(v) for v in mom.S[0])
    return ConsistencyReport(p=m.p, expectation_gap=abs(float(mom.ghat[0]) - m.p),
                             psi_residual=abs(eq(m.p)), psi_residual_quad=quad, s0=s0,
                             tolerance=vs.numerics.root_tolerance)

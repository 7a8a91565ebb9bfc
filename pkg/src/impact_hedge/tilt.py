"""Conditional moments under the pricing measure.

With ``f = B_T`` and ``g = G(B_T)`` every conditional expectation under the
pricing measure at a state ``(t, b)`` is a ratio

    E[h(Z) w(Z)] / E[w(Z)],    Z ~ N(b, (T - t) I),   w(z) = U'(x + p - G(z)),

so the whole engine runs on a handful of such ratios.  :class:`TiltMoments`
collects them for a batch of states; the price surface, the volatility
matrix, the Girsanov drift and the hedge integrand are all read off it.

Three routes produce the same :class:`TiltMoments`:

``closed``
    separable piecewise-linear claims.  On each linear piece of a payoff the
    tilt ``exp(r * (q z + c))`` only shifts the Gaussian mean, so each piece
    contributes truncated-normal moments in closed form.  The mixture utility
    is handled term by term, which keeps the product structure.
``tensor``
    generic claims, J <= 3, quadrature grids from :mod:`impact_hedge.gauss`.
``mc``
    plain Monte Carlo on a labelled stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .gauss import mc_stream, quad_rule, tensor_nodes
from .model import SeparableClaim, as_states

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


def _log1mexp(d):
    # log(1 - exp(d)) for d <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d > -np.log(2), np.log(-np.expm1(d)), np.log1p(-np.exp(d)))


def log_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for lo < hi, accurate in both tails."""
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    c = np.where(flip, -lo, hi)
    la, lc = log_ndtr(a), log_ndtr(c)
    return lc + _log1mexp(la - lc)


def _ratio_density(v, logz):
    # phi(v) / exp(logz); zero at infinite v
    with np.errstate(invalid="ignore"):
        out = np.exp(-0.5 * v * v - _LOG_SQRT_2PI - logz)
    return np.where(np.isfinite(v), out, 0.0)


@dataclass
class TermMoments:
    """Per utility term ``i`` and coordinate ``j``: moments of one coordinate
    under the one-dimensional tilt ``exp(rate_i * weight_j * phi_j(z))``.

    Arrays have shape ``(n_states, n_terms, J)``.  ``log_e0`` is the log of
    the un-normalised mass; the others are tilted expectations of ``z``,
    ``phi``, ``phi'``, ``z phi'`` and ``phi phi'``.
    """

    log_e0: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    zdphi: np.ndarray
    phidphi: np.ndarray


def term_moments(claim: SeparableClaim, rates, t, b, T: float) -> TermMoments:
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    t, b = as_states(t, b, claim.dim)
    n, J = b.shape
    tau = T - t
    if np.any(tau < -1e-12 * max(1.0, T)):
        raise ValueError("state time is after the horizon")
    tau = np.clip(tau, 0.0, None)
    s = np.sqrt(tau)
    flat = s == 0
    s_safe = np.where(flat, 1.0, s)[:, None, None]
    shape = (n, len(rates), J)
    out = {k: np.empty(shape) for k in ("log_e0", "z", "phi", "dphi", "zdphi", "phidphi")}
    for j, (payoff, wj) in enumerate(zip(claim.payoffs, claim.weights)):
        lo, hi, q, c = payoff.segments()
        bj = b[:, j][:, None, None]
        r = (rates * wj)[None, :, None]
        a = r * q * s_safe
        alpha = (lo - bj) / s_safe - a
        beta = (hi - bj) / s_safe - a
        logz = log_mass(alpha, beta)
        lm = r * (q * bj + c) + 0.5 * a * a + logz
        mu1 = _ratio_density(alpha, logz) - _ratio_density(beta, logz)
        ez = bj + s_safe * (a + mu1)
        if flat.any():
            # degenerate law: all mass on the piece holding b (right-continuous)
            piece = np.searchsorted(np.asarray(payoff.breakpoints), b[flat, j], side="right")
            hit = np.arange(len(q))[None, :] == piece[:, None]
            lm[flat] = np.where(hit[:, None, :], (r * (q * bj + c))[flat], -np.inf)
            ez[flat] = np.broadcast_to(bj[flat], ez[flat].shape)
        log_e0 = logsumexp(lm, axis=-1)
        pi = np.exp(lm - log_e0[..., None])
        ephi = q * ez + c
        out["log_e0"][..., j] = log_e0
        out["z"][..., j] = (pi * ez).sum(-1)
        out["phi"][..., j] = (pi * ephi).sum(-1)
        out["dphi"][..., j] = (pi * q).sum(-1)
        out["zdphi"][..., j] = (pi * q * ez).sum(-1)
        out["phidphi"][..., j] = (pi * q * ephi).sum(-1)
    return TermMoments(**out)


@dataclass
class TiltMoments:
    """Tilted conditional moments for a batch of ``n`` states.

    ``S``      (n, J)     E~[Z]
    ``ghat``   (n,)       E~[G(Z)]
    ``dG``     (n, J)     E~[dG/dz_j]
    ``zdG``    (n, J, J)  E~[Z^i dG/dz_j]
    ``AdG``    (n, J)     E~[A dG/dz_j],  A = A(x + p - G(Z))
    ``AzdG``   (n, J, J)  E~[A Z^i dG/dz_j]
    ``AGdG``   (n, J)     E~[A G dG/dz_j]
    ``log_norm`` (n,)     log E[U'(x + p - G(Z))] under P given the state
    """

    S: np.ndarray
    ghat: np.ndarray
    dG: np.ndarray
    zdG: np.ndarray
    AdG: np.ndarray
    AzdG: np.ndarray
    AGdG: np.ndarray
    log_norm: np.ndarray

    def vol_general(self):
        J = self.S.shape[-1]
        return np.eye(J) + self.AzdG - self.S[:, :, None] * self.AdG[:, None, :]

    def vol_covariance(self, gamma: float):
        J = self.S.shape[-1]
        cov = self.zdG - self.S[:, :, None] * self.dG[:, None, :]
        return np.eye(J) + gamma * cov

    def drift(self):
        return self.AdG

    def integrand(self):
        return self.dG + self.AGdG - self.ghat[:, None] * self.AdG


def closed_moments(m, t, b) -> TiltMoments:
    s = m.scenario
    u, claim = s.utility, s.claim
    gam = u.rates
    tm = term_moments(claim, gam, t, b, s.T)
    w = np.asarray(claim.weights)
    lam = np.log(u.weights) - gam * (s.x + m.p) + tm.log_e0.sum(-1)
    log_norm = logsumexp(lam, axis=-1)
    om = np.exp(lam - log_norm[:, None])           # (n, I)
    oa = om * gam

    def avg(weights, arr):
        return np.einsum("ni,ni...->n...", weights, arr)

    J = w.size
    zphi = tm.z[..., :, None] * tm.dphi[..., None, :]  # (n, I, J, J)
    idx = np.arange(J)
    zphi[..., idx, idx] = tm.zdphi
    zphi = zphi * w
    gsum = (tm.phi * w).sum(-1)                    # E_i[G], (n, I)
    gdg = (gsum[..., None] - w * tm.phi) * tm.dphi * w + w * w * tm.phidphi
    return TiltMoments(
        S=avg(om, tm.z),
        ghat=avg(om, gsum),
        dG=avg(om, tm.dphi * w),
        zdG=avg(om, zphi),
        AdG=avg(oa, tm.dphi * w),
        AzdG=avg(oa, zphi),
        AGdG=avg(oa, gdg),
        log_norm=log_norm,
    )


def _sample_moments(m, Z, nu):
    """Moments from weighted points ``Z`` (k, J) with base weights ``nu``."""
    s = m.scenario
    G = s.claim.value(Z)
    dG = s.claim.grad(Z)
    arg = s.x + m.p - G
    logw = s.utility.log_marginal(arg)
    A = s.utility.risk_aversion(arg)
    top = logw.max()
    v = nu * np.exp(logw - top)
    tot = v.sum()
    v = v / tot
    va = v * A
    return dict(
        S=v @ Z,
        ghat=v @ G,
        dG=v @ dG,
        zdG=np.einsum("k,ki,kj->ij", v, Z, dG),
        AdG=va @ dG,
        AzdG=np.einsum("k,ki,kj->ij", va, Z, dG),
        AGdG=(va * G) @ dG,
        log_norm=np.log(tot) + top,
    )


def _stack(rows) -> TiltMoments:
    return TiltMoments(**{k: np.stack([r[k] for r in rows]) for k in rows[0]})


def tensor_moments(m, t, b) -> TiltMoments:
    s = m.scenario
    if s.J > 3:
        raise ValueError("tensor quadrature is limited to J <= 3")
    t, b = as_states(t, b, s.J)
    rule = quad_rule(s.numerics.quad_order)
    bps = s.claim.breakpoints
    rows = []
    for ti, bi in zip(t, b):
        Z, nu = tensor_nodes(bi, max(s.T - ti, 0.0), rule, bps)
        rows.append(_sample_moments(m, Z, nu))
    return _stack(rows)


def mc_moments(m, t, b, label: str = "tilt-moments") -> TiltMoments:
    s = m.scenario
    t, b = as_states(t, b, s.J)
    n = int(s.numerics.mc_paths)
    xi = mc_stream(s.numerics.seed, label).standard_normal((n, s.J))
    nu = np.full(n, 1.0 / n)
    rows = [_sample_moments(m, bi + np.sqrt(max(s.T - ti, 0.0)) * xi, nu)
            for ti, bi in zip(t, b)]
    return _stack(rows)


def moments(m, t, b, method: str = "auto") -> TiltMoments:
    """Dispatch to the closed-form, tensor or Monte Carlo route."""
    if method == "auto":
        if isinstance(m.scenario.claim, SeparableClaim):
            method = "closed"
        else:
            method = "tensor" if m.scenario.J <= 3 else "mc"
    if method == "closed":
        return closed_moments(m, t, b)
    if method == "tensor":
        return tensor_moments(m, t, b)
    if method == "mc":
        return mc_moments(m, t, b)
    raise ValueError(f"unknown method {method!r}")

"""Gaussian conditional expectations.

Everything downstream reduces to integrals of functions of ``B_T`` against
its conditional law ``N(b, (T - t) I)``.  This module provides three ways of
doing that: Gauss-Hermite quadrature (with the domain split at payoff kinks),
products of one-dimensional rules for separable integrands, and seeded Monte
Carlo.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

# half-width of the standardised window used once the domain is split
WINDOW = 16.0
# split pieces are no wider than this (standard deviations)
PIECE_WIDTH = 4.0


@dataclass(frozen=True)
class QuadRule:
    """Probabilists' Gauss-Hermite rule normalised to the N(0, 1) law."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)

    def expect(self, fn: Callable) -> float:
        return float(np.dot(self.weights, fn(self.nodes)))


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float = 0.0


@lru_cache(maxsize=None)
def _hermite(order: int):
    x, w = hermegauss(order)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _legendre(order: int):
    return leggauss(order)


def quad_rule(order: int) -> QuadRule:
    if int(order) < 2:
        raise ValueError(f"quadrature order must be >= 2, got {order}")
    x, w = _hermite(int(order))
    return QuadRule(x, w)


def mc_stream(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible generator for one (seed, purpose) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(label.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


def normal_nodes(rule: QuadRule, cuts=()):
    """Nodes and weights for E[h(U)], U ~ N(0, 1).

    ``cuts`` are kinks of ``h`` in standard coordinates.  Without cuts inside
    the window the plain Hermite rule is returned; otherwise the window is
    split at the cuts (and into pieces of bounded width) and each piece gets
    a Gauss-Legendre rule times the normal density.
    """
    cuts = np.asarray(cuts, dtype=float).ravel()
    cuts = cuts[np.abs(cuts) < WINDOW]
    if cuts.size == 0:
        return rule.nodes, rule.weights
    grid = np.arange(-WINDOW, WINDOW + 0.5 * PIECE_WIDTH, PIECE_WIDTH)
    edges = np.unique(np.concatenate([grid, cuts]))
    lx, lw = _legendre(max(8, rule.order // 4))
    half = 0.5 * np.diff(edges)[:, None]
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    u = (mid + half * lx).ravel()
    w = (half * lw).ravel() * np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi)
    return u, w


def cond_expect_1d(mean: float, var: float, fn: Callable, breakpoints=(),
                   rule: Optional[QuadRule] = None) -> float:
    """E[fn(Z)] for Z ~ N(mean, var), splitting the domain at ``breakpoints``."""
    if var < 0:
        raise ValueError("variance must be non-negative")
    rule = rule or quad_rule(64)
    if var == 0:
        return float(fn(np.asarray(mean, dtype=float)))
    sd = np.sqrt(var)
    cuts = (np.asarray(breakpoints, dtype=float) - mean) / sd
    u, w = normal_nodes(rule, cuts)
    vals = np.asarray(fn(mean + sd * u), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("integrand is not finite at the quadrature nodes")
    return float(np.dot(w, vals))


def tensor_nodes(b, var: float, rule: QuadRule, breakpoints: Optional[Sequence] = None):
    """Tensor grid ``(Z, w)`` for N(b, var I) with per-coordinate splitting.

    ``Z`` has shape ``(n_nodes, J)``.
    """
    b = np.asarray(b, dtype=float)
    J = b.shape[0]
    if var == 0:
        return b[None, :], np.ones(1)
    sd = np.sqrt(var)
    breakpoints = breakpoints or [()] * J
    axes, wts = [], []
    for j in range(J):
        u, w = normal_nodes(rule, (np.asarray(breakpoints[j], dtype=float) - b[j]) / sd)
        axes.append(b[j] + sd * u)
        wts.append(w)
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, J)
    W = wts[0]
    for w in wts[1:]:
        W = np.multiply.outer(W, w)
    return Z, W.ravel()


@dataclass(frozen=True)
class SeparableIntegrand:
    """sum_k coef[k] * prod_j factors[k][j](z^j); a ``None`` factor means 1."""

    coefs: tuple
    factors: tuple
    breakpoints: Optional[tuple] = None


def cond_expect_nd(b, tau: float, fn, method: str = "tensor", cfg=None,
                   breakpoints=None, label: str = "cond_expect_nd") -> Estimate:
    """E[fn(Z)] for Z ~ N(b, tau I), with ``tau = T - t``.

    ``fn`` maps an array ``(..., J)`` to ``(...)``.  ``method`` is one of
    ``"tensor"`` (J <= 3), ``"separable-product"`` (``fn`` must be a
    :class:`SeparableIntegrand`) or ``"mc"``.
    """
    from .model import NumericsConfig

    cfg = cfg or NumericsConfig()
    b = np.atleast_1d(np.asarray(b, dtype=float))
    J = b.shape[0]
    if tau < 0:
        raise ValueError("state time is after the horizon")
    rule = quad_rule(cfg.quad_order)
    if method == "separable-product":
        if not isinstance(fn, SeparableIntegrand):
            raise TypeError("separable-product needs a SeparableIntegrand")
        bps = fn.breakpoints or [()] * J
        total = 0.0
        for coef, factors in zip(fn.coefs, fn.factors):
            term = coef
            for j, f in enumerate(factors):
                if f is not None:
                    term *= cond_expect_1d(b[j], tau, f, bps[j], rule)
            total += term
        return Estimate(float(total), 0.0)
    if isinstance(fn, SeparableIntegrand):
        fn = _expand(fn)
    if method == "tensor":
        if J > 3:
            raise ValueError("tensor quadrature is limited to J <= 3")
        Z, w = tensor_nodes(b, tau, rule, breakpoints)
        vals = np.asarray(fn(Z), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("integrand is not finite at the quadrature nodes")
        return Estimate(float(np.dot(w, vals)), 0.0)
    if method == "mc":
        if tau == 0:
            return Estimate(float(fn(b[None, :])[0]), 0.0)
        rng = mc_stream(cfg.seed, label)
        Z = b + np.sqrt(tau) * rng.standard_normal((int(cfg.mc_paths), J))
        vals = np.asarray(fn(Z), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("integrand is not finite at the sampled points")
        return Estimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals))))
    raise ValueError(f"unknown method {method!r}")


def _expand(sep: SeparableIntegrand) -> Callable:
    def fn(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1])
        for coef, factors in zip(sep.coefs, sep.factors):
            term = np.full(z.shape[:-1], float(coef))
            for j, f in enumerate(factors):
                if f is not None:
                    term = term * f(z[..., j])
            out = out + term
        return out
    return fn

"""Hedge ratios from the martingale representation of the claim price.

Both the claim price ``g^`` and the traded price ``S~`` are martingales under
the pricing measure driven by ``B~``:

    dg^ = eta . dB~,    dS~ = sigma~ dB~.

Matching ``dg^ = H . dS~`` gives ``sigma~^T H = eta``.  The integrand is the
Malliavin derivative of ``G(B_T)`` under the tilted measure, which picks up a
correction from the change of measure:

    eta_j = E~[dG/dz_j] + E~[A (G - g^) dG/dz_j],

equivalently the spatial gradient of ``g^(t, b)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import _states, delayed_sigma, price_fn, claim_fn, smallest_singular_value
from .model import SeparableClaim
from .tilt import moments

log = logging.getLogger(__name__)

# ratios are flagged (not refused) below this smallest singular value
WARN_COND = 1e-4


class IncompleteMarketError(RuntimeError):
    """sigma~ is numerically singular at one or more states."""

    def __init__(self, message, t=None, b=None):
        self.t = t
        self.b = b
        super().__init__(message)


@dataclass(frozen=True)
class HedgeRatio:
    eta: np.ndarray          # (n, J)
    H: np.ndarray            # (n, J) shares of each asset
    cond: np.ndarray         # (n,) smallest singular value of sigma~
    warn: np.ndarray         # (n,) near-singular flag
    sigma: np.ndarray        # (n, J, J)
    H_fd: Optional[np.ndarray] = None


def clark_ocone_integrand(m, t, b, method: str = "auto"):
    t, b = _states(m, t, b)
    out = moments(m, t, b, method).integrand()
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite hedge integrand")
    return out


def _diagonal(m) -> bool:
    s = m.scenario
    return (isinstance(s.claim, SeparableClaim) and s.utility.single_rate is not None
            and s.traded.kind == "bachelier")


def fd_ratio(m, t, b, rel_step: float = 1e-4):
    """H^j ~ (dg^/db^j) / (dS~^j/db^j) by central differences (diagonal case)."""
    t, b = _states(m, t, b)
    n, J = b.shape
    h = rel_step * np.sqrt(np.maximum(m.scenario.T - t, 1e-12))
    out = np.empty((n, J))
    for j in range(J):
        e = np.zeros(J)
        e[j] = 1.0
        up, dn = b + h[:, None] * e, b - h[:, None] * e
        dg = claim_fn(m, t, up) - claim_fn(m, t, dn)
        ds = price_fn(m, t, up)[:, j] - price_fn(m, t, dn)[:, j]
        out[:, j] = dg / ds
    return out


def solve_ratio(sigma, eta, diagonal: bool = False):
    if diagonal:
        return eta / np.diagonal(sigma, axis1=-2, axis2=-1)
    return np.linalg.solve(np.swapaxes(sigma, -1, -2), eta[..., None])[..., 0]


def hedge_ratio(m, t, b, method: str = "auto", diagonal: Optional[bool] = None,
                fd_check: bool = False) -> HedgeRatio:
    """Holdings ``H`` solving ``sigma~^T H = eta``.

    Raises :class:`IncompleteMarketError` when the smallest singular value of
    ``sigma~`` falls below ``numerics.sv_tolerance`` at any requested state.
    """
    s = m.scenario
    t, b = _states(m, t, b)
    mom = moments(m, t, b, method)
    eta = mom.integrand()
    if s.traded.kind == "delayed":
        sigma = delayed_sigma(t, s.traded.tau)
    elif s.utility.single_rate is not None:
        sigma = mom.vol_covariance(s.utility.single_rate)
    else:
        sigma = mom.vol_general()
    cond = smallest_singular_value(sigma)
    bad = cond < s.numerics.sv_tolerance
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        where = ""
        if s.traded.kind == "delayed":
            where = f"; the traded price has zero volatility on [0, {s.traded.tau:g})"
        raise IncompleteMarketError(
            f"market numerically incomplete at {int(bad.sum())} state(s), first t={t[k]:.6g}, "
            f"b={b[k].tolist()} (min singular value {cond[k]:.3g} < {s.numerics.sv_tolerance:g}){where}",
            t=t[bad], b=b[bad])
    warn = cond < WARN_COND
    if warn.any():
        log.warning("%d state(s) with near-singular volatility (min sv %.3g)", int(warn.sum()), cond.min())
    if diagonal is None:
        diagonal = _diagonal(m)
    H = solve_ratio(sigma, eta, diagonal)
    H_fd = fd_ratio(m, t, b) if fd_check and _diagonal(m) else None
    return HedgeRatio(eta=eta, H=H, cond=cond, warn=warn, sigma=sigma, H_fd=H_fd)

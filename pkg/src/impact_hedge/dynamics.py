"""Price surface, Girsanov drift and volatility matrix as functions of the state.

Sign convention: the pricing density process satisfies ``dZ = Z alpha . dB``,
and ``B~ = B - int alpha dt`` is the Brownian motion under the pricing
measure.  For ``g = B_T`` and exponential utility the tilt shifts the
terminal mean up by ``gamma (T - t)`` and ``alpha = gamma``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import State, as_states
from .tilt import moments


class MethodError(ValueError):
    pass


@dataclass(frozen=True)
class VolMatrix:
    """sigma~ at one or more states; ``entries`` is ``(..., J, J)``."""

    entries: np.ndarray
    min_sv: np.ndarray

    @classmethod
    def from_entries(cls, entries) -> "VolMatrix":
        entries = np.asarray(entries, dtype=float)
        return cls(entries, smallest_singular_value(entries))


def smallest_singular_value(a):
    a = np.asarray(a, dtype=float)
    return np.linalg.svd(a, compute_uv=False)[..., -1]


def _is_delayed(m) -> bool:
    return m.scenario.traded.kind == "delayed"


def _states(m, t, b):
    t, b = as_states(t, b, m.scenario.J)
    if np.any(t < 0) or np.any(t > m.scenario.T * (1 + 1e-12)):
        raise ValueError(f"state time outside [0, {m.scenario.T}]")
    return t, b


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite conditional expectation; check the scenario")


def price_fn(m, t, b, method: str = "auto", b_tau=None):
    """S~(t, b) = E~[B_T | B_t = b], shape ``(n, J)``."""
    t, b = _states(m, t, b)
    if _is_delayed(m):
        return delayed_dynamics(t, b, m.scenario.traded.tau, b_tau=b_tau)[0][:, None]
    out = moments(m, t, b, method).S
    _check_finite(out)
    return out


def claim_fn(m, t, b, method: str = "auto"):
    """g^(t, b) = E~[G(B_T) | B_t = b], shape ``(n,)``."""
    t, b = _states(m, t, b)
    out = moments(m, t, b, method).ghat
    _check_finite(out)
    return out


def girsanov_drift(m, t, b, method: str = "auto"):
    """alpha^j = E~[A(x + p - G) dG/dz_j | b]."""
    t, b = _states(m, t, b)
    out = moments(m, t, b, method).drift()
    _check_finite(out)
    return out


def vol_matrix_general(m, t, b, method: str = "auto") -> VolMatrix:
    """sigma~_ij = delta_ij + E~[A(x + p - G) (Z^i - S~^i) dG/dz_j | b].

    Valid for any utility in the exponential-mixture family.
    """
    t, b = _states(m, t, b)
    if _is_delayed(m):
        return VolMatrix.from_entries(delayed_sigma(t, m.scenario.traded.tau))
    out = moments(m, t, b, method).vol_general()
    _check_finite(out)
    return VolMatrix.from_entries(out)


def vol_matrix_bachelier(m, t, b, method: str = "auto") -> VolMatrix:
    """sigma~_ij = delta_ij + gamma Cov~(Z^i, dG/dz_j | b); single exponential only."""
    gamma = m.scenario.utility.single_rate
    if gamma is None:
        raise MethodError("covariance form needs a single-exponential utility; use vol_matrix_general")
    t, b = _states(m, t, b)
    if _is_delayed(m):
        return VolMatrix.from_entries(delayed_sigma(t, m.scenario.traded.tau))
    out = moments(m, t, b, method).vol_covariance(gamma)
    _check_finite(out)
    return VolMatrix.from_entries(out)


def vol_matrix(m, t, b, method: str = "auto") -> VolMatrix:
    if m.scenario.utility.single_rate is not None:
        return vol_matrix_bachelier(m, t, b, method)
    return vol_matrix_general(m, t, b, method)


def delayed_sigma(t, tau: float):
    """sigma = 1{t >= tau} as ``(n, 1, 1)``; does not need the path."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return (t >= tau).astype(float)[:, None, None]


def delayed_dynamics(t, b, tau: float, gamma: float = 1.0, b_tau=None):
    """Closed-form price and volatility for the zero-volatility-before-tau asset.

    Returns ``(S~, sigma)`` as arrays of shape ``(n,)``.  ``S~`` is zero before
    ``tau``; afterwards it is ``B~_t - B~_tau`` and needs ``b_tau``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    b = np.asarray(b, dtype=float).reshape(len(t), -1)[:, 0] if np.size(b) else np.zeros(len(t))
    sigma = (t >= tau).astype(float)
    price = np.zeros_like(t)
    late = t >= tau
    if late.any():
        if b_tau is None:
            raise ValueError("price after tau depends on B_tau; pass b_tau")
        bt = np.broadcast_to(np.asarray(b_tau, dtype=float), t.shape)
        price[late] = (b[late] - gamma * t[late]) - (bt[late] - gamma * tau)
    return price, sigma


def state_grid(t_values, b_values, J: int):
    """Cartesian grid of states; ``b_values`` is reused on every coordinate
    unless a list of per-coordinate arrays is given."""
    if np.ndim(b_values) == 1 or J == 1:
        axes = [np.asarray(b_values, dtype=float).ravel()] * J
    else:
        axes = [np.asarray(v, dtype=float) for v in b_values]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, J)
    t = np.repeat(np.asarray(t_values, dtype=float), len(mesh))
    b = np.tile(mesh, (len(np.atleast_1d(t_values)), 1))
    return t, b


@dataclass
class ScanReport:
    t: np.ndarray
    b: np.ndarray
    min_sv: np.ndarray
    tolerance: float
    failing: list = field(default_factory=list)

    @property
    def overall_min(self) -> float:
        return float(self.min_sv.min())

    @property
    def verdict(self) -> str:
        return "COMPLETE" if self.overall_min >= self.tolerance else "INCOMPLETE"

    def rows(self):
        for ti, bi, sv in zip(self.t, self.b, self.min_sv):
            yield (float(ti), *map(float, bi), float(sv))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *[f"b{j + 1}" for j in range(self.b.shape[1])], "min_sv"])
        for row in self.rows():
            w.writerow([repr(v) for v in row])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return dict(verdict=self.verdict, min_sv=self.overall_min, tolerance=self.tolerance,
                    n_states=int(len(self.t)),
                    failing=[dict(t=float(s.t), b=list(s.b)) for s in self.failing])


def completeness_scan(m, t, b=None, method: str = "auto") -> ScanReport:
    """Smallest singular value of sigma~ over a grid of states.

    ``t`` may be a list of :class:`State` objects (then ``b`` is omitted).
    """
    if b is None:
        states = list(t)
        t = np.array([s.t for s in states])
        b = np.array([s.b for s in states], dtype=float)
    t, b = _states(m, t, b)
    sv = vol_matrix(m, t, b, method).min_sv
    tol = m.scenario.numerics.sv_tolerance
    bad = [State(float(ti), tuple(bi)) for ti, bi, v in zip(t, b, sv) if v < tol]
    return ScanReport(t=t, b=b, min_sv=np.asarray(sv), tolerance=tol, failing=bad)

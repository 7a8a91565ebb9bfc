"""Domain types shared by the pricing engine.

A market is described by a :class:`Scenario`: the number of Brownian
drivers ``J``, the horizon ``T``, the market maker's cash ``x``, a utility
built from a finite mixture of exponentials, the claim ``g = G(B_T)`` to be
hedged and the traded payoffs (``f = B_T`` in the Bachelier case).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp


class ScenarioError(ValueError):
    """Raised when a scenario violates its invariants.

    ``diagnostics`` holds one message per violated condition.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


# ---------------------------------------------------------------------------
# utility


@dataclass(frozen=True)
class UtilitySpec:
    """U(z) = sum_i -c_i exp(-gamma_i z) / gamma_i.

    ``terms`` is a sequence of ``(c_i, gamma_i)`` pairs.
    """

    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms",
                           tuple((float(c), float(g)) for c, g in self.terms))

    @classmethod
    def exponential(cls, gamma: float, c: float = 1.0) -> "UtilitySpec":
        return cls(((c, gamma),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms])

    @property
    def rates(self) -> np.ndarray:
        return np.array([g for _, g in self.terms])

    @property
    def single_rate(self) -> Optional[float]:
        """gamma when the utility has constant absolute risk aversion, else None."""
        rates = {g for _, g in self.terms}
        return rates.pop() if len(rates) == 1 else None

    @property
    def c1(self) -> float:
        return 1.0 / self.rates.max()

    @property
    def c2(self) -> float:
        return 1.0 / self.rates.min()

    def problems(self) -> list:
        out = []
        if not self.terms:
            out.append("utility.terms: empty term list")
        for k, (c, g) in enumerate(self.terms):
            if not (np.isfinite(c) and c > 0):
                out.append(f"utility.terms[{k}].c: non-positive weight {c!r}")
            if not (np.isfinite(g) and g > 0):
                out.append(f"utility.terms[{k}].gamma: non-positive rate {g!r}")
        return out

    # log(c_i) - gamma_i z, shape (..., n_terms)
    def _log_terms(self, z):
        z = np.asarray(z, dtype=float)[..., None]
        return np.log(self.weights) - self.rates * z

    def log_marginal(self, z):
        """log U'(z), evaluated without overflow."""
        return logsumexp(self._log_terms(z), axis=-1)

    def risk_aversion(self, z):
        """A(z) = -U''(z)/U'(z), a softmax average of the rates."""
        lt = self._log_terms(z)
        w = np.exp(lt - lt.max(axis=-1, keepdims=True))
        return (w * self.rates).sum(axis=-1) / w.sum(axis=-1)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)[..., None]
        return -(self.weights / self.rates * np.exp(-self.rates * z)).sum(axis=-1)

    def marginal(self, z):
        z = np.asarray(z, dtype=float)[..., None]
        return (self.weights * np.exp(-self.rates * z)).sum(axis=-1)

    def curvature(self, z):
        z = np.asarray(z, dtype=float)[..., None]
        return -(self.weights * self.rates * np.exp(-self.rates * z)).sum(axis=-1)


def utility_eval(u: UtilitySpec, z):
    """Return ``(U, U', U'', A)`` at ``z``."""
    return u(z), u.marginal(z), u.curvature(z), u.risk_aversion(z)


# ---------------------------------------------------------------------------
# claims


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function of one variable.

    ``slopes[m]`` applies on ``[breakpoints[m-1], breakpoints[m])``, so there
    is one more slope than breakpoints.  ``anchor`` is the value at the first
    breakpoint, or at zero when there are none.
    """

    breakpoints: tuple
    slopes: tuple
    anchor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(k) for k in self.breakpoints))
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        object.__setattr__(self, "anchor", float(self.anchor))

    @classmethod
    def call(cls, strike: float = 0.0) -> "PiecewiseLinear":
        return cls((strike,), (0.0, 1.0), 0.0)

    @classmethod
    def put(cls, strike: float = 0.0) -> "PiecewiseLinear":
        return cls((strike,), (-1.0, 0.0), 0.0)

    @classmethod
    def linear(cls, slope: float = 1.0, intercept: float = 0.0) -> "PiecewiseLinear":
        return cls((), (slope,), intercept)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls((), (0.0,), value)

    def problems(self, where: str = "payoff") -> list:
        out = []
        k = np.asarray(self.breakpoints)
        if len(self.slopes) != len(k) + 1:
            out.append(f"{where}: need {len(k) + 1} slopes for {len(k)} breakpoints, got {len(self.slopes)}")
        if len(k) > 1 and not np.all(np.diff(k) > 0):
            out.append(f"{where}.breakpoints: not strictly increasing")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(self.slopes)) and np.isfinite(self.anchor)):
            out.append(f"{where}: non-finite breakpoint, slope or anchor")
        return out

    @property
    def convex(self) -> bool:
        return bool(np.all(np.diff(self.slopes) >= 0))

    def segments(self):
        """Arrays ``(lo, hi, slope, intercept)``, one entry per linear piece."""
        k = np.asarray(self.breakpoints, dtype=float)
        s = np.asarray(self.slopes, dtype=float)
        lo = np.concatenate([[-np.inf], k])
        hi = np.concatenate([k, [np.inf]])
        if len(k) == 0:
            return lo, hi, s, np.array([self.anchor])
        # value at each breakpoint by accumulating slopes from the anchor
        vals = self.anchor + np.concatenate([[0.0], np.cumsum(s[1:-1] * np.diff(k))])
        icpt = np.empty_like(s)
        icpt[0] = vals[0] - s[0] * k[0]
        icpt[1:] = vals - s[1:] * k
        return lo, hi, s, icpt

    def _piece(self, x):
        return np.searchsorted(np.asarray(self.breakpoints), x, side="right")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        _, _, s, c = self.segments()
        m = self._piece(x)
        return s[m] * x + c[m]

    def deriv(self, x):
        """Right derivative."""
        x = np.asarray(x, dtype=float)
        return np.asarray(self.slopes)[self._piece(x)]


@dataclass(frozen=True)
class SeparableClaim:
    """G(z) = sum_j weights[j] * payoffs[j](z[j])."""

    payoffs: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "payoffs", tuple(self.payoffs))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @classmethod
    def single(cls, payoff: PiecewiseLinear, weight: float = 1.0) -> "SeparableClaim":
        return cls((payoff,), (weight,))

    @property
    def dim(self) -> int:
        return len(self.payoffs)

    @property
    def convex(self) -> bool:
        return all(p.convex for p in self.payoffs)

    @property
    def breakpoints(self) -> list:
        return [p.breakpoints for p in self.payoffs]

    @property
    def growth_bound(self) -> float:
        return float(sum(w * max(abs(s) for s in p.slopes)
                         for p, w in zip(self.payoffs, self.weights)))

    def problems(self) -> list:
        out = []
        if len(self.weights) != len(self.payoffs):
            out.append("claim: one weight per payoff required")
        for j, (p, w) in enumerate(zip(self.payoffs, self.weights)):
            out.extend(p.problems(f"claim.payoffs[{j}]"))
            if not (np.isfinite(w) and w >= 0):
                out.append(f"claim.payoffs[{j}].weight: negative weight {w!r}")
        return out

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return sum(w * p(z[..., j]) for j, (p, w) in enumerate(zip(self.payoffs, self.weights)))

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        return np.stack([w * p.deriv(z[..., j])
                         for j, (p, w) in enumerate(zip(self.payoffs, self.weights))], axis=-1)


@dataclass(frozen=True)
class SmoothClaim:
    """Caller-supplied payoff with its gradient, both vectorised over ``(..., J)``.

    ``growth_bound`` declares |G(z)| <= growth_bound * (1 + |z|); it is not
    checked numerically.
    """

    payoff: Callable
    gradient: Callable
    dim: int
    growth_bound: float
    convex: bool = False

    @property
    def breakpoints(self) -> list:
        return [() for _ in range(self.dim)]

    def problems(self) -> list:
        if not (np.isfinite(self.growth_bound) and self.growth_bound >= 0):
            return ["claim.growth_bound: must be a finite non-negative number"]
        return []

    def value(self, z):
        return np.asarray(self.payoff(np.asarray(z, dtype=float)), dtype=float)

    def grad(self, z):
        return np.asarray(self.gradient(np.asarray(z, dtype=float)), dtype=float)


ClaimSpec = Union[SeparableClaim, SmoothClaim]


def claim_eval(claim: ClaimSpec, z):
    """Payoff and a.e. gradient (right derivative at kinks)."""
    return claim.value(z), claim.grad(z)


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class Bachelier:
    """Traded payoffs f^j = B_T^j."""

    kind = "bachelier"


@dataclass(frozen=True)
class DelayedBachelier:
    """Single traded payoff with zero volatility before ``tau``.

    f = B_T - B_tau - (T - tau), hedging g = B_T under U(z) = -exp(-z).
    """

    tau: float
    kind = "delayed"


@dataclass(frozen=True)
class NumericsConfig:
    quad_order: int = 64
    mc_paths: int = 200_000
    time_steps: int = 64
    seed: int = 20240607
    sv_tolerance: float = 1e-8
    root_tolerance: float = 1e-10
    bracket_doublings: int = 60

    def problems(self) -> list:
        out = []
        if int(self.quad_order) < 2:
            out.append("numerics.quad_order: must be >= 2")
        for name in ("mc_paths", "time_steps", "bracket_doublings"):
            if int(getattr(self, name)) < 1:
                out.append(f"numerics.{name}: must be positive")
        if not 0 <= int(self.seed) < 2**64:
            out.append("numerics.seed: must be an unsigned 64-bit integer")
        for name in ("sv_tolerance", "root_tolerance"):
            if not getattr(self, name) > 0:
                out.append(f"numerics.{name}: must be positive")
        return out


@dataclass(frozen=True)
class Scenario:
    J: int
    T: float
    x: float
    utility: UtilitySpec
    claim: ClaimSpec
    traded: Union[Bachelier, DelayedBachelier] = field(default_factory=Bachelier)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    # rms replication error accepted by the ``hedge`` command
    hedge_threshold: float = 0.1

    @classmethod
    def delayed(cls, T: float = 1.0, tau: Optional[float] = None,
                numerics: Optional[NumericsConfig] = None) -> "Scenario":
        return cls(J=1, T=T, x=0.0, utility=UtilitySpec.exponential(1.0),
                   claim=SeparableClaim.single(PiecewiseLinear.linear()),
                   traded=DelayedBachelier(T / 2 if tau is None else tau),
                   numerics=numerics or NumericsConfig())


@dataclass(frozen=True)
class ValidatedScenario:
    scenario: Scenario
    c1: float
    c2: float
    growth_bound: float

    def __getattr__(self, name):
        # forward scenario fields (J, T, x, utility, ...)
        if name.startswith("__") or name == "scenario":
            raise AttributeError(name)
        return getattr(self.scenario, name)


@dataclass(frozen=True)
class State:
    t: float
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "b", tuple(float(v) for v in np.atleast_1d(self.b)))

    def check(self, T: float) -> None:
        if not 0.0 <= self.t <= T:
            raise ValueError(f"state time {self.t} outside [0, {T}]")


def _is_fixed_delayed_claim(claim) -> bool:
    if not isinstance(claim, SeparableClaim) or claim.dim != 1:
        return False
    p, w = claim.payoffs[0], claim.weights[0]
    return p.breakpoints == () and w * p.slopes[0] == 1.0 and w * p.anchor == 0.0


def validate_scenario(s: Scenario) -> ValidatedScenario:
    """Check the scenario and attach the risk-aversion bounds and claim growth.

    Raises :class:`ScenarioError` listing every violated condition.
    """
    if isinstance(s, ValidatedScenario):
        return s
    problems = []
    if not (isinstance(s.J, (int, np.integer)) and s.J >= 1):
        problems.append(f"J: must be a positive integer, got {s.J!r}")
    if not (np.isfinite(s.T) and s.T > 0):
        problems.append(f"T: must be positive, got {s.T!r}")
    if not np.isfinite(s.x):
        problems.append("x: must be finite")
    problems.extend(s.utility.problems())
    problems.extend(s.claim.problems())
    problems.extend(s.numerics.problems())
    if not s.hedge_threshold > 0:
        problems.append("hedge_threshold: must be positive")
    if s.claim.dim != s.J:
        problems.append(f"claim: dimension {s.claim.dim} does not match J={s.J}")
    if isinstance(s.traded, DelayedBachelier):
        if s.J != 1:
            problems.append("traded: the delayed asset requires J = 1")
        if not 0.0 < s.traded.tau < s.T:
            problems.append(f"traded.tau: must lie in (0, T), got {s.traded.tau!r}")
        if not _is_fixed_delayed_claim(s.claim):
            problems.append("claim: the delayed asset fixes the claim to g = B_T")
        if s.utility.terms != ((1.0, 1.0),):
            problems.append("utility: the delayed asset fixes U(z) = -exp(-z)")
    if problems:
        raise ScenarioError(problems)
    u = s.utility
    return ValidatedScenario(s, c1=u.c1, c2=u.c2, growth_bound=s.claim.growth_bound)


def as_states(t, b, J: int):
    """Broadcast ``t`` and ``b`` to arrays of shape ``(n,)`` and ``(n, J)``."""
    b = np.asarray(b, dtype=float)
    if b.ndim == 0:
        b = np.full((1, J), float(b))
    elif b.ndim == 1:
        b = b.reshape(1, J) if b.shape[0] == J else b.reshape(-1, 1)
    if b.shape[-1] != J:
        raise ValueError(f"state vector has {b.shape[-1]} coordinates, expected {J}")
    b = b.reshape(-1, J)
    t = np.asarray(t, dtype=float).reshape(-1)
    n = max(len(t), len(b))
    return np.broadcast_to(t, (n,)).copy(), np.broadcast_to(b, (n, J)).copy()

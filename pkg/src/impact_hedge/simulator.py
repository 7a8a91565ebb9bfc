"""Path simulation, discrete replication and statistical diagnostics."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import delayed_sigma
from .hedging import IncompleteMarketError, solve_ratio, _diagonal
from .model import validate_scenario
from .tilt import moments

PERTURBATIONS = ("constant", "sign", "ramp")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("IMPACT_HEDGE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PathBundle:
    times: np.ndarray        # (steps + 1,)
    increments: np.ndarray   # (n_paths, steps, J)
    seed: int

    @property
    def steps(self) -> int:
        return self.increments.shape[1]

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def levels(self) -> np.ndarray:
        n, _, J = self.increments.shape
        return np.concatenate([np.zeros((n, 1, J)), np.cumsum(self.increments, axis=1)], axis=1)

    def coarsen(self) -> "PathBundle":
        """Same paths on a grid with twice the step (steps must be even)."""
        if self.steps % 2:
            raise ValueError("need an even number of steps to coarsen")
        inc = self.increments[:, 0::2] + self.increments[:, 1::2]
        return PathBundle(self.times[::2].copy(), inc, self.seed)


def simulate_paths(s, steps: int, n_paths: int, seed: int) -> PathBundle:
    """Brownian increments under P; path ``i`` draws from its own stream so
    any subset of paths can be regenerated independently."""
    if steps < 1 or n_paths < 1:
        raise ValueError("steps and n_paths must be positive")
    J, T = s.J, s.T
    dt = T / steps
    children = np.random.SeedSequence(int(seed)).spawn(int(n_paths))
    inc = np.empty((n_paths, steps, J))
    sd = np.sqrt(dt)
    for i, child in enumerate(children):
        inc[i] = sd * np.random.Generator(np.random.PCG64(child)).standard_normal((steps, J))
    return PathBundle(np.linspace(0.0, T, steps + 1), inc, int(seed))


@dataclass
class Walk:
    """Quantities along the paths of a bundle, left-endpoint convention."""

    S: np.ndarray        # (n, N + 1, J)
    H: np.ndarray        # (n, N, J)
    sigma: np.ndarray    # (n, N, J, J)
    alpha: np.ndarray    # (n, N, J)
    b: np.ndarray        # (n, N + 1, J)


def _walk_chunk(m, times, levels):
    s = m.scenario
    n, N1, J = levels.shape
    N = N1 - 1
    S = np.empty((n, N1, J))
    H = np.empty((n, N, J))
    sig = np.empty((n, N, J, J))
    alpha = np.empty((n, N, J))
    diag = _diagonal(m)
    tol = s.numerics.sv_tolerance
    for k in range(N):
        t = times[k]
        mom = moments(m, t, levels[:, k])
        if s.traded.kind == "delayed":
            vol = delayed_sigma(np.full(n, t), s.traded.tau)
            if vol.min() < tol:
                raise IncompleteMarketError(
                    f"market incomplete at t={t:.6g} on all {n} paths: the traded price has "
                    f"zero volatility on [0, {s.traded.tau:g}), so g cannot be represented "
                    "as an integral against it", t=np.full(n, t), b=levels[:, k])
        elif s.utility.single_rate is not None:
            vol = mom.vol_covariance(s.utility.single_rate)
        else:
            vol = mom.vol_general()
        cond = np.linalg.svd(vol, compute_uv=False)[..., -1]
        if cond.min() < tol:
            bad = cond < tol
            raise IncompleteMarketError(
                f"sigma~ singular at t={t:.6g} on {int(bad.sum())} path(s)",
                t=np.full(int(bad.sum()), t), b=levels[bad, k])
        S[:, k] = mom.S
        sig[:, k] = vol
        alpha[:, k] = mom.drift()
        H[:, k] = solve_ratio(vol, mom.integrand(), diag)
    S[:, N] = levels[:, N]
    return S, H, sig, alpha


def walk(bundle: PathBundle, m, threads: Optional[int] = None) -> Walk:
    levels = bundle.levels
    threads = threads or worker_count()
    if threads == 1 or bundle.n_paths < 2 * threads:
        parts = [_walk_chunk(m, bundle.times, levels)]
    else:
        chunks = np.array_split(np.arange(bundle.n_paths), threads)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda idx: _walk_chunk(m, bundle.times, levels[idx]), chunks))
    S, H, sig, alpha = (np.concatenate(p, axis=0) for p in zip(*parts))
    return Walk(S=S, H=H, sigma=sig, alpha=alpha, b=levels)


@dataclass
class HedgeReport:
    terminal_errors: np.ndarray
    rms: float
    max_abs: float
    steps: int
    paths: int
    seed: int
    p: float
    wealth_paths: Optional[np.ndarray] = None
    walk: Optional[Walk] = field(default=None, repr=False)

    def as_dict(self) -> dict:
        e = self.terminal_errors
        return dict(p=self.p, rms=self.rms, max_abs=self.max_abs, mean=float(e.mean()),
                    steps=self.steps, paths=self.paths, seed=self.seed)

    def errors_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "terminal_error"])
        for i, v in enumerate(self.terminal_errors):
            w.writerow([i, repr(float(v))])
        return buf.getvalue()

    def trajectories_csv(self, times) -> str:
        if self.wealth_paths is None or self.walk is None:
            raise ValueError("replicate(..., store=True) keeps the trajectories")
        wk = self.walk
        n, N1, J = wk.b.shape
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "k", "t", *[f"b{j + 1}" for j in range(J)],
                    *[f"S{j + 1}" for j in range(J)], *[f"H{j + 1}" for j in range(J)], "W"])
        nan = [float("nan")] * J
        for i in range(n):
            for k in range(N1):
                h = wk.H[i, k].tolist() if k < N1 - 1 else nan
                w.writerow([i, k, repr(float(times[k])), *map(repr, wk.b[i, k].tolist()),
                            *map(repr, wk.S[i, k].tolist()), *map(repr, h),
                            repr(float(self.wealth_paths[i, k]))])
        return buf.getvalue()


def replicate(bundle: PathBundle, m, store: bool = False, threads: Optional[int] = None) -> HedgeReport:
    """Self-financing replication along each path.

    ``W_0 = p`` and ``W_{k+1} = W_k + H(t_k, b_k) . (S~(t_{k+1}, b_{k+1}) - S~(t_k, b_k))``;
    the report holds ``W_N - G(b_N)`` per path.
    """
    wk = walk(bundle, m, threads)
    gains = np.einsum("nkj,nkj->nk", wk.H, np.diff(wk.S, axis=1))
    W = m.p + np.concatenate([np.zeros((bundle.n_paths, 1)), np.cumsum(gains, axis=1)], axis=1)
    err = W[:, -1] - m.scenario.claim.value(wk.b[:, -1])
    return HedgeReport(terminal_errors=err, rms=float(np.sqrt(np.mean(err ** 2))),
                       max_abs=float(np.abs(err).max()), steps=bundle.steps,
                       paths=bundle.n_paths, seed=bundle.seed, p=m.p,
                       wealth_paths=W if store else None, walk=wk if store else None)


@dataclass
class ResidualReport:
    mean_fine: float
    mean_coarse: float
    max_fine: float
    exact: bool
    ratio: float
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _residuals(bundle, m, threads=None):
    wk = walk(bundle, m, threads)
    dB = bundle.increments
    dS = np.diff(wk.S, axis=1)
    tilde = dB - wk.alpha * bundle.dt
    r = dS - np.einsum("nkij,nkj->nki", wk.sigma, tilde)
    return np.linalg.norm(r, axis=-1)


def martingale_residual_check(bundle: PathBundle, m, exact_tol: float = 1e-8,
                              band=(1.5, 3.0)) -> ResidualReport:
    """Local residual ``dS~ - sigma~ (dB - alpha dt)`` on the bundle's grid and
    on the grid with twice the step built from the same paths."""
    fine = _residuals(bundle, m)
    coarse = _residuals(bundle.coarsen(), m)
    mf, mc = float(fine.mean()), float(coarse.mean())
    exact = float(fine.max()) <= exact_tol and float(coarse.max()) <= exact_tol
    ratio = mc / mf if mf > 0 else float("nan")
    passed = exact or band[0] <= ratio <= band[1]
    return ResidualReport(mf, mc, float(fine.max()), exact, ratio, passed)


def _perturbation(shape: str, times, b):
    n, N1, J = b.shape
    if shape == "constant":
        return np.ones((n, N1 - 1, J))
    if shape == "sign":
        return np.sign(b[:, :-1])
    if shape == "ramp":
        return np.broadcast_to((times[:-1] / times[-1])[None, :, None], (n, N1 - 1, J)).copy()
    raise ValueError(f"unknown perturbation {shape!r}")


@dataclass
class OptimalityRow:
    shape: str
    eps: float
    delta: float
    stderr: float
    half_gap: float          # Delta(eps) - Delta(eps / 2)
    half_gap_stderr: float


@dataclass
class OptimalityReport:
    rows: list
    baseline: float          # E[U(x - int H dS~)] on the grid
    exact_baseline: float    # E[U(x + p - g)] on the same paths
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return dict(baseline=self.baseline, exact_baseline=self.exact_baseline,
                    checks=self.checks, passed=self.passed,
                    rows=[r.__dict__ for r in self.rows])


def mm_optimality_check(bundle: PathBundle, m, eps_list: Sequence[float] = (0.0, 0.125, 0.25, 0.5),
                        shapes: Sequence[str] = PERTURBATIONS, z: float = 2.0) -> OptimalityReport:
    """Perturb the market maker's position -H by eps * phi and compare
    expected utility along the same paths (common random numbers).

    ``Delta(eps) = E[U(x + int (-H + eps phi) dS~)] - E[U(x - int H dS~)]``,
    so ``Delta(0) = 0`` identically.
    """
    s = m.scenario
    wk = walk(bundle, m)
    dS = np.diff(wk.S, axis=1)
    base = s.x - np.einsum("nkj,nkj->n", wk.H, dS)
    u_base = s.utility(base)
    exact = float(s.utility(s.x + m.p - s.claim.value(wk.b[:, -1])).mean())
    n = bundle.n_paths
    rows, checks = [], {}
    for shape in shapes:
        gain = np.einsum("nkj,nkj->n", _perturbation(shape, bundle.times, wk.b), dS)
        for eps in eps_list:
            d = s.utility(base + eps * gain) - u_base
            dh = d - (s.utility(base + 0.5 * eps * gain) - u_base)
            rows.append(OptimalityRow(shape, float(eps), float(d.mean()),
                                      float(d.std(ddof=1) / np.sqrt(n)),
                                      float(dh.mean()), float(dh.std(ddof=1) / np.sqrt(n))))
        own = [r for r in rows if r.shape == shape]
        zero = [r for r in own if r.eps == 0.0]
        top = max(own, key=lambda r: r.eps)
        if zero:
            checks[f"{shape}: Delta(0) == 0"] = all(r.delta == 0.0 for r in zero)
        checks[f"{shape}: Delta({top.eps:g}) < -{z:g} se"] = top.delta < -z * top.stderr
        checks[f"{shape}: concave along eps"] = all(r.half_gap <= z * r.half_gap_stderr
                                                   for r in own if r.eps > 0)
    return OptimalityReport(rows, float(u_base.mean()), exact, checks)


@dataclass
class ConvergenceTable:
    steps: list
    rms: list
    max_abs: list
    slack: float = 0.10

    @property
    def monotone(self) -> bool:
        return all(b <= (1 + self.slack) * a + 1e-12 for a, b in zip(self.rms, self.rms[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["steps", "rms", "max_abs"])
        for row in zip(self.steps, self.rms, self.max_abs):
            w.writerow([row[0], repr(row[1]), repr(row[2])])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return dict(steps=self.steps, rms=self.rms, max_abs=self.max_abs, monotone=self.monotone)


def convergence_study(s, steps_list: Sequence[int], n_paths: int, seed: int, m=None) -> ConvergenceTable:
    from .pricing import solve_price

    steps_list = list(steps_list)
    if any(b <= a for a, b in zip(steps_list, steps_list[1:])):
        raise ValueError("steps_list must be increasing")
    m = m or solve_price(validate_scenario(s))
    rms, mx = [], []
    for steps in steps_list:
        rep = replicate(simulate_paths(m.scenario, steps, n_paths, seed), m)
        rms.append(rep.rms)
        mx.append(rep.max_abs)
    return ConvergenceTable(steps_list, rms, mx)

"""Command-line entry point.

    impact-hedge price   --scenario FILE [--out DIR]
    impact-hedge surface --scenario FILE --t-grid a:b:n --b-grid a:b:n [--out DIR]
    impact-hedge hedge   --scenario FILE [--steps N] [--paths N] [--seed U64] [--threshold X]
    impact-hedge verify  --scenario FILE [--paths N] [--seed U64]
    impact-hedge diagnose --scenario FILE [--t-grid a:b:n] [--b-grid a:b:n]
    impact-hedge simulate --scenario FILE [--steps N] [--paths N] [--seed U64]

Exit codes: 0 ok, 2 invalid scenario or arguments, 3 non-unique price,
4 incomplete market, 5 failed check (verify, hedge threshold, manifest).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load
from .dynamics import completeness_scan, state_grid, vol_matrix_general, price_fn
from .gauss import quad_rule
from .hedging import IncompleteMarketError, hedge_ratio
from .model import NumericsConfig, ScenarioError, validate_scenario
from .pricing import NonUniquePriceError, consistency_report, solve_price
from .simulator import martingale_residual_check, mm_optimality_check, replicate, simulate_paths
from .tilt import moments

EXIT_OK, EXIT_INVALID, EXIT_NONUNIQUE, EXIT_INCOMPLETE, EXIT_FAILED = 0, 2, 3, 4, 5
DEFAULT_SEED = NumericsConfig().seed


class _Fail(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _grid(spec: str, name: str):
    try:
        a, b, n = spec.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise _Fail(EXIT_INVALID, f"{name}: expected a:b:n, got {spec!r}")
    if n < 1:
        raise _Fail(EXIT_INVALID, f"{name}: n must be positive")
    return np.linspace(a, b, n)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


class Run:
    """Collects output files and writes the manifest last."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict = {}
        self.started = time.time()
        self.previous = None
        mpath = self.out / "manifest.json"
        if args.check_manifest:
            if not mpath.exists():
                raise _Fail(EXIT_FAILED, f"--check-manifest: no manifest in {self.out}")
            self.previous = json.loads(mpath.read_text())

    def write(self, name: str, text: str):
        data = text.encode()
        (self.out / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def finish(self, numerics, seed) -> int:
        manifest = dict(
            scenario=str(self.args.scenario), command=self.command,
            numerics=dict(numerics.__dict__), out=str(self.out), version=__version__,
            seed=int(seed), wall_clock_seconds=round(time.time() - self.started, 3),
            finished_at=time.strftime("%Y-%m-%dT%H:%M:%S%z"), files=self.files)
        (self.out / "manifest.json").write_text(_dumps(manifest))
        if self.previous is not None:
            old = self.previous.get("files", {})
            diff = sorted(k for k in set(old) | set(self.files) if old.get(k) != self.files.get(k))
            if diff:
                print(f"manifest check FAILED: {', '.join(diff)} differ", file=sys.stderr)
                return EXIT_FAILED
            print("manifest check ok")
        return EXIT_OK


def _scenario(args):
    s = load(args.scenario)
    if args.seed is not None:
        s = _with_numerics(s, seed=args.seed)
    return validate_scenario(s)


def _with_numerics(s, **kw):
    from dataclasses import replace
    return replace(s, numerics=replace(s.numerics, **kw))


def cmd_price(args) -> int:
    vs = _scenario(args)
    run = Run(args, "price")
    m = solve_price(vs)
    rep = consistency_report(m)
    info = dict(p=m.p, psi_residual=rep.psi_residual, expectation_gap=rep.expectation_gap,
                unique=True, closed_form=None if np.isnan(m.closed_form) else m.closed_form,
                s0=list(rep.s0), norm0=m.norm0)
    print(f"p                 = {m.p:.15g}")
    print(f"|psi(p)|          = {rep.psi_residual:.3e}")
    print(f"|E~[g] - p|       = {rep.expectation_gap:.3e}")
    print("root unique       = yes")
    run.write("price.json", _dumps(info))
    return run.finish(vs.numerics, vs.numerics.seed)


def surface_rows(m, t, b):
    s = m.scenario
    J = s.J
    mom = moments(m, t, b)
    if s.traded.kind == "delayed":
        S = np.where(t[:, None] < s.traded.tau, 0.0, np.nan)
        sigma = (t >= s.traded.tau).astype(float)[:, None, None]
    else:
        S = mom.S
        sigma = (mom.vol_covariance(s.utility.single_rate) if s.utility.single_rate is not None
                 else mom.vol_general())
    sv = np.linalg.svd(sigma, compute_uv=False)[..., -1]
    eta = mom.integrand()
    H = np.full((len(t), J), np.nan)
    ok = sv >= s.numerics.sv_tolerance
    if ok.any():
        H[ok] = np.linalg.solve(np.swapaxes(sigma[ok], -1, -2), eta[ok][..., None])[..., 0]
    header = (["t"] + [f"b{j + 1}" for j in range(J)] + [f"S{j + 1}" for j in range(J)] + ["g"]
              + [f"sigma{i + 1}{j + 1}" for i in range(J) for j in range(J)] + ["min_sv"]
              + [f"H{j + 1}" for j in range(J)])
    rows = []
    for k in range(len(t)):
        rows.append([t[k], *b[k], *S[k], mom.ghat[k], *sigma[k].ravel(), sv[k], *H[k]])
    return header, rows


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([str(v) if isinstance(v, int) else repr(float(v)) for v in r])
    return buf.getvalue()


def cmd_surface(args) -> int:
    vs = _scenario(args)
    tg = _grid(args.t_grid, "--t-grid")
    bg = _grid(args.b_grid, "--b-grid")
    if tg.min() < 0 or tg.max() > vs.T:
        raise _Fail(EXIT_INVALID, f"--t-grid: times must lie in [0, {vs.T}]")
    run = Run(args, "surface")
    m = solve_price(vs)
    t, b = state_grid(tg, bg, vs.J)
    header, rows = surface_rows(m, t, b)
    run.write("surface.csv", _csv(header, rows))
    print(f"{len(rows)} rows -> {run.out / 'surface.csv'}")
    return run.finish(vs.numerics, vs.numerics.seed)


def cmd_hedge(args) -> int:
    vs = _scenario(args)
    steps = args.steps or vs.numerics.time_steps
    paths = args.paths or 1000
    seed = vs.numerics.seed
    threshold = args.threshold if args.threshold is not None else vs.hedge_threshold
    run = Run(args, "hedge")
    m = solve_price(vs)
    bundle = simulate_paths(vs, steps, paths, seed)
    rep = replicate(bundle, m, store=args.dump_paths)
    res = martingale_residual_check(bundle, m) if steps % 2 == 0 else None
    summary = rep.as_dict()
    summary.update(threshold=threshold, passed=rep.rms <= threshold,
                   residual_check=res.as_dict() if res else None)
    run.write("hedge_errors.csv", rep.errors_csv())
    run.write("hedge_report.json", _dumps(summary))
    if args.dump_paths:
        run.write("trajectories.csv", rep.trajectories_csv(bundle.times))
    print(f"p = {m.p:.12g}  steps = {steps}  paths = {paths}  seed = {seed}")
    print(f"rms terminal error = {rep.rms:.6e}  max |error| = {rep.max_abs:.6e}  threshold = {threshold:g}")
    if res is not None:
        print(f"martingale residual ratio = {res.ratio:.3f}  exact = {res.exact}  passed = {res.passed}")
    code = run.finish(vs.numerics, seed)
    if rep.rms > threshold:
        print("rms above threshold", file=sys.stderr)
        return EXIT_FAILED
    return code


def cmd_diagnose(args) -> int:
    vs = _scenario(args)
    tg = _grid(args.t_grid or f"0:{vs.T}:11", "--t-grid")
    bg = _grid(args.b_grid or "-2:2:9", "--b-grid")
    if tg.min() < 0 or tg.max() > vs.T:
        raise _Fail(EXIT_INVALID, f"--t-grid: times must lie in [0, {vs.T}]")
    run = Run(args, "diagnose")
    m = solve_price(vs)
    t, b = state_grid(tg, bg, vs.J)
    scan = completeness_scan(m, t, b)
    run.write("scan.csv", scan.to_csv())
    run.write("scan.json", _dumps(scan.as_dict()))
    print(f"{scan.verdict}: min singular value {scan.overall_min:.6g} over {len(t)} states "
          f"({len(scan.failing)} below {scan.tolerance:g})")
    code = run.finish(vs.numerics, vs.numerics.seed)
    return EXIT_INCOMPLETE if scan.verdict != "COMPLETE" else code


def cmd_simulate(args) -> int:
    vs = _scenario(args)
    steps = args.steps or vs.numerics.time_steps
    paths = args.paths or 100
    run = Run(args, "simulate")
    bundle = simulate_paths(vs, steps, paths, vs.numerics.seed)
    lv = bundle.levels
    header = ["path", "t"] + [f"b{j + 1}" for j in range(vs.J)]
    rows = [[i, bundle.times[k], *lv[i, k]] for i in range(paths) for k in range(steps + 1)]
    run.write("paths.csv", _csv(header, rows))
    print(f"{paths} paths x {steps} steps -> {run.out / 'paths.csv'}")
    return run.finish(vs.numerics, vs.numerics.seed)


def _random_states(vs, n, rng):
    t = rng.uniform(0.0, 0.95 * vs.T, n)
    b = rng.normal(0.0, np.sqrt(vs.T), (n, vs.J))
    return t, b


def verify_checks(vs, paths: int = 10_000, steps: int = 64):
    """Run the invariant suite.  Returns a list of ``(name, status, detail, hard)``."""
    out = []
    add = lambda name, ok, detail, hard=True: out.append((name, "PASS" if ok else "FAIL", detail, hard))
    skip = lambda name, why: out.append((name, "SKIP", why, False))
    names = ["quadrature", "price consistency", "sigma consistency", "delta identity",
             "diagonal structure", "hedge linear system", "optimality"]

    delayed = vs.traded.kind == "delayed"
    try:
        m = solve_price(vs)
    except NonUniquePriceError as exc:
        add("price", False, str(exc))
        return out
    t_axis = np.linspace(0.0, vs.T, 6)[:-1]
    b_axis = np.linspace(-2, 2, 5 if vs.J <= 2 else 3) * np.sqrt(vs.T)
    gt, gb = state_grid(t_axis, b_axis, vs.J)
    scan = completeness_scan(m, gt, gb)
    add("completeness", scan.verdict == "COMPLETE",
        f"{scan.verdict}, min sv {scan.overall_min:.3g} over {len(gt)} states")
    if delayed:
        for n in names:
            skip(n, "delayed-start scenario")
        return out
    complete = scan.verdict == "COMPLETE"

    rule = quad_rule(vs.numerics.quad_order)
    from math import factorial
    mom_err = max(abs(rule.expect(lambda z: z ** k) - (0 if k % 2 else factorial(k) / (2 ** (k // 2) * factorial(k // 2))))
                  for k in range(9))
    add("quadrature", abs(rule.weights.sum() - 1) < 1e-12 and mom_err < 1e-9, f"max moment error {mom_err:.2e}")

    rep = consistency_report(m)
    add("price consistency", rep.expectation_gap <= 1e-8 and rep.psi_residual <= vs.numerics.root_tolerance,
        f"|E~g-p|={rep.expectation_gap:.2e} |psi|={rep.psi_residual:.2e}")

    rng = np.random.default_rng(vs.numerics.seed)
    t, b = _random_states(vs, 50, rng)
    mom = moments(m, t, b)
    general = mom.vol_general()
    errs = []
    if vs.utility.single_rate is not None:
        errs.append(np.abs(general - mom.vol_covariance(vs.utility.single_rate)).max())
    if vs.J <= 3:
        tensor = vol_matrix_general(m, t[:10], b[:10], method="tensor").entries
        errs.append(np.abs(general[:10] - tensor).max())
    e = float(max(errs)) if errs else 0.0
    if errs:
        add("sigma consistency", e <= 1e-6, f"max entry gap {e:.2e}")
    else:
        skip("sigma consistency", "no second route for J > 3 with mixture utility")

    h = 1e-4 * np.sqrt(vs.T - t)
    fd = np.empty_like(general)
    for j in range(vs.J):
        step = np.zeros(vs.J)
        step[j] = 1.0
        fd[:, :, j] = (price_fn(m, t, b + h[:, None] * step) - price_fn(m, t, b - h[:, None] * step)) / (2 * h[:, None])
    e = float(np.abs(fd - general).max())
    add("delta identity", e <= 1e-4, f"max |sigma - dS/db| {e:.2e}")

    claim = vs.claim
    if getattr(claim, "convex", False) and hasattr(claim, "payoffs") and vs.utility.single_rate is not None:
        gsig = vol_matrix_general(m, gt, gb).entries
        off = gsig - np.einsum("nii->ni", gsig)[..., None] * np.eye(vs.J)
        dmin = float(np.einsum("nii->ni", gsig).min())
        offmax = float(np.abs(off).max())
        add("diagonal structure", offmax <= 1e-8 and dmin >= 1 - 1e-8,
            f"max off-diagonal {offmax:.1e}, min diagonal {dmin:.6f}")
    else:
        skip("diagonal structure", "needs a separable convex claim and exponential utility")

    if not complete:
        skip("hedge linear system", "market incomplete on the scan grid")
        skip("optimality", "market incomplete on the scan grid")
        return out
    hr = hedge_ratio(m, t, b, diagonal=False)
    resid = float(np.abs(np.einsum("nji,nj->ni", hr.sigma, hr.H) - hr.eta).max())
    add("hedge linear system", resid <= 1e-10, f"max |sigma^T H - eta| {resid:.1e}")

    bundle = simulate_paths(vs, steps, paths, vs.numerics.seed)
    opt = mm_optimality_check(bundle, m)
    hard = vs.numerics.seed == DEFAULT_SEED
    failed = [k for k, v in opt.checks.items() if not v]
    add("optimality", not failed, "all statistical checks hold" if not failed else "; ".join(failed), hard)
    return out


def cmd_verify(args) -> int:
    vs = _scenario(args)
    run = Run(args, "verify")
    checks = verify_checks(vs, paths=args.paths or 10_000, steps=args.steps or 64)
    width = max(len(c[0]) for c in checks)
    for name, status, detail, hard in checks:
        tag = "" if hard or status != "FAIL" else " (diagnostic)"
        print(f"{name:<{width}}  {status}{tag}  {detail}")
    failing = [c[0] for c in checks if c[1] == "FAIL" and c[3]]
    run.write("verify.json", _dumps(dict(
        checks=[dict(name=n, status=st, detail=d, hard=h) for n, st, d, h in checks],
        failing=failing)))
    code = run.finish(vs.numerics, vs.numerics.seed)
    if failing:
        print(f"failing: {', '.join(failing)}", file=sys.stderr)
        return EXIT_FAILED
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impact-hedge", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, metavar="PATH")
        p.add_argument("--out", default="out", metavar="DIR")
        p.add_argument("--seed", type=int, default=None, metavar="U64")
        p.add_argument("--check-manifest", action="store_true",
                       help="compare output hashes with the manifest already in --out")
        return p

    common(sub.add_parser("price", help="solve for the claim price"))
    p = common(sub.add_parser("surface", help="price surface, sigma and H on a grid"))
    p.add_argument("--t-grid", required=True, metavar="a:b:n")
    p.add_argument("--b-grid", required=True, metavar="a:b:n")
    p = common(sub.add_parser("hedge", help="simulate discrete replication"))
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--dump-paths", action="store_true", help="also write trajectories.csv")
    p = common(sub.add_parser("verify", help="run the invariant suite"))
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--paths", type=int, default=None)
    p = common(sub.add_parser("diagnose", help="completeness scan of sigma~ over a grid"))
    p.add_argument("--t-grid", default=None, metavar="a:b:n")
    p.add_argument("--b-grid", default=None, metavar="a:b:n")
    p = common(sub.add_parser("simulate", help="write Brownian paths under the base measure"))
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--paths", type=int, default=None)
    return ap


COMMANDS = dict(price=cmd_price, surface=cmd_surface, hedge=cmd_hedge, verify=cmd_verify,
                diagnose=cmd_diagnose, simulate=cmd_simulate)


def _join_grids(argv):
    # "-1:1:5" looks like an option to argparse; glue it to its flag
    out, it = [], iter(argv)
    for a in it:
        if a in ("--t-grid", "--b-grid"):
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_grids(argv))
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"invalid scenario: {d}", file=sys.stderr)
        return EXIT_INVALID
    except NonUniquePriceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONUNIQUE
    except IncompleteMarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Scenario files.

A scenario is a TOML document whose keys mirror :class:`~impact_hedge.model.Scenario`::

    J = 1
    T = 1.0
    x = 0.0
    hedge_threshold = 0.1

    [traded]
    kind = "bachelier"          # or "delayed" with tau = 0.5

    [utility]
    terms = [{c = 1.0, gamma = 1.0}]

    [[claim.payoffs]]
    kind = "call"               # call | put | linear | constant | piecewise
    strike = 0.0
    weight = 1.0

    [numerics]
    quad_order = 64

Unknown keys are errors.
"""
from __future__ import annotations

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (Bachelier, DelayedBachelier, NumericsConfig, PiecewiseLinear, Scenario,
                    ScenarioError, SeparableClaim, UtilitySpec)

_TOP = {"J", "T", "x", "hedge_threshold", "traded", "utility", "claim", "numerics"}
_PAYOFF_KEYS = {
    "call": {"strike"},
    "put": {"strike"},
    "linear": {"slope", "intercept"},
    "constant": {"value"},
    "piecewise": {"breakpoints", "slopes", "anchor"},
}


def _unknown(section: str, got, allowed, errors: list):
    for k in sorted(set(got) - set(allowed)):
        errors.append(f"{section}{k}: unknown key")


def _num(v, where: str, errors: list, integer: bool = False):
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        errors.append(f"{where}: expected {'an integer' if integer else 'a number'}, got {v!r}")
        return None
    return int(v) if integer else float(v)


def _payoff(d: dict, where: str, errors: list):
    kind = d.get("kind", "piecewise")
    if kind not in _PAYOFF_KEYS:
        errors.append(f"{where}.kind: unknown payoff kind {kind!r}")
        return None, 0.0
    _unknown(where + ".", d, _PAYOFF_KEYS[kind] | {"kind", "weight"}, errors)
    weight = _num(d.get("weight", 1.0), where + ".weight", errors)
    if kind in ("call", "put"):
        k = _num(d.get("strike", 0.0), where + ".strike", errors)
        if k is None:
            return None, weight
        return (PiecewiseLinear.call(k) if kind == "call" else PiecewiseLinear.put(k)), weight
    if kind == "linear":
        return PiecewiseLinear.linear(_num(d.get("slope", 1.0), where + ".slope", errors) or 0.0,
                                      _num(d.get("intercept", 0.0), where + ".intercept", errors) or 0.0), weight
    if kind == "constant":
        v = _num(d.get("value", 0.0), where + ".value", errors)
        return PiecewiseLinear.constant(v or 0.0), weight
    try:
        return PiecewiseLinear(tuple(d.get("breakpoints", ())), tuple(d["slopes"]),
                               d.get("anchor", 0.0)), weight
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"{where}: bad piecewise payoff ({exc})")
        return None, weight


def scenario_from_dict(doc: dict) -> Scenario:
    errors: list = []
    _unknown("", doc, _TOP, errors)

    traded_doc = doc.get("traded", {"kind": "bachelier"})
    kind = traded_doc.get("kind", "bachelier")
    if kind == "bachelier":
        _unknown("traded.", traded_doc, {"kind"}, errors)
        traded = Bachelier()
    elif kind == "delayed":
        _unknown("traded.", traded_doc, {"kind", "tau"}, errors)
        traded = DelayedBachelier(_num(traded_doc.get("tau"), "traded.tau", errors) or 0.0)
    else:
        errors.append(f"traded.kind: unknown kind {kind!r}")
        traded = Bachelier()

    udoc = doc.get("utility", {})
    _unknown("utility.", udoc, {"terms"}, errors)
    terms = []
    for i, term in enumerate(udoc.get("terms", [])):
        if not isinstance(term, dict):
            errors.append(f"utility.terms[{i}]: expected a table with c and gamma")
            continue
        _unknown(f"utility.terms[{i}].", term, {"c", "gamma"}, errors)
        c = _num(term.get("c", 1.0), f"utility.terms[{i}].c", errors)
        g = _num(term.get("gamma"), f"utility.terms[{i}].gamma", errors)
        if c is not None and g is not None:
            terms.append((c, g))

    cdoc = doc.get("claim", {})
    _unknown("claim.", cdoc, {"kind", "payoffs"}, errors)
    if cdoc.get("kind", "separable") != "separable":
        errors.append("claim.kind: only separable piecewise-linear claims can be read from a file")
    payoffs, weights = [], []
    for j, pd in enumerate(cdoc.get("payoffs", [])):
        p, w = _payoff(pd, f"claim.payoffs[{j}]", errors)
        if p is not None:
            payoffs.append(p)
            weights.append(w if w is not None else 0.0)

    ndoc = doc.get("numerics", {})
    fields = NumericsConfig.__dataclass_fields__
    _unknown("numerics.", ndoc, fields, errors)
    nkw = {}
    for k, v in ndoc.items():
        if k in fields:
            integer = k in ("quad_order", "mc_paths", "time_steps", "seed", "bracket_doublings")
            val = _num(v, f"numerics.{k}", errors, integer=integer)
            if val is not None:
                nkw[k] = val

    J = _num(doc.get("J", len(payoffs) or 1), "J", errors, integer=True)
    T = _num(doc.get("T", 1.0), "T", errors)
    x = _num(doc.get("x", 0.0), "x", errors)
    thr = _num(doc.get("hedge_threshold", 0.1), "hedge_threshold", errors)
    if errors:
        raise ScenarioError(errors)
    return Scenario(J=J, T=T, x=x, utility=UtilitySpec(tuple(terms)),
                    claim=SeparableClaim(tuple(payoffs), tuple(weights)),
                    traded=traded, numerics=NumericsConfig(**nkw), hedge_threshold=thr)


def loads(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"parse error: {exc}"]) from exc
    return scenario_from_dict(doc)


def load(path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"{path}: parse error: {exc}"]) from exc
    return scenario_from_dict(doc)

import pytest

from impact_hedge.config import load, loads
from impact_hedge.model import DelayedBachelier, ScenarioError

BASE = """
J = 2
T = 0.5
x = 1.0
hedge_threshold = 0.2

[utility]
terms = [{c = 1.0, gamma = 0.5}, {c = 2, gamma = 3e0}]

[[claim.payoffs]]
kind = "call"
strike = 0.1
weight = 0.7

[[claim.payoffs]]
kind = "piecewise"
breakpoints = [-1.0, 1.0]
slopes = [0.0, 1.0, 0.0]
anchor = 0.0
weight = 0.3

[numerics]
quad_order = 32
seed = 42
sv_tolerance = 1e-6
"""


def test_round_trip():
    s = loads(BASE)
    assert (s.J, s.T, s.x, s.hedge_threshold) == (2, 0.5, 1.0, 0.2)
    assert s.utility.terms == ((1.0, 0.5), (2.0, 3.0))
    assert s.claim.weights == (0.7, 0.3)
    assert s.claim.payoffs[1](2.0) == pytest.approx(2.0)
    assert s.numerics.quad_order == 32 and s.numerics.seed == 42 and s.numerics.sv_tolerance == 1e-6


def test_delayed_section():
    s = loads('[traded]\nkind = "delayed"\ntau = 0.25\n[utility]\nterms=[{c=1.0,gamma=1.0}]\n'
              '[[claim.payoffs]]\nkind="linear"\n')
    assert s.traded == DelayedBachelier(0.25) and s.J == 1


@pytest.mark.parametrize("edit,needle", [
    ("T = 0.5", "Tt"),                       # typo in a top-level key
    ("strike = 0.1", "strke"),
    ("quad_order = 32", "quad_ordr"),
])
def test_unknown_keys(edit, needle):
    bad = BASE.replace(edit, edit.replace(edit.split(" ")[0], needle))
    with pytest.raises(ScenarioError) as e:
        loads(bad)
    assert any(needle in d and "unknown" in d for d in e.value.diagnostics)


def test_type_errors_are_collected():
    bad = BASE.replace("quad_order = 32", "quad_order = 32.5").replace("strike = 0.1", 'strike = "atm"')
    with pytest.raises(ScenarioError) as e:
        loads(bad)
    text = " ".join(e.value.diagnostics)
    assert "quad_order" in text and "strike" in text


def test_unknown_kinds():
    with pytest.raises(ScenarioError, match="payoff kind"):
        loads(BASE.replace('kind = "call"', 'kind = "digital"'))
    with pytest.raises(ScenarioError):
        loads(BASE + '\n[traded]\nkind = "heston"\n')


def test_parse_error_and_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="parse"):
        loads("J = [")
    with pytest.raises(ScenarioError, match="cannot read"):
        load(tmp_path / "missing.toml")
    p = tmp_path / "s.toml"
    p.write_text(BASE)
    assert load(p).J == 2

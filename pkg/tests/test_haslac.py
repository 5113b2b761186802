import re

import pytest
from hypothesis import given, settings, strategies as st

from hafeat.errors import NonAffineError, ParseError
from hafeat.haslac import load_haslac, parse_haslac, print_haslac
from hafeat.model import Valuation, eval_condition

from conftest import data
import corpus

MINIMAL = """module m(x)
    mode only
    begin
        ddt x = 1;
    end
    initial begin
        set begin
            mode == only;
            x == 0;
        end
    end
endmodule
"""


def test_buck_structure():
    ha = load_haslac(data("buck.ha"))
    assert ha.variables == ("v", "i", "t")
    assert len(ha.parameters) >= 8
    assert ha.parameters["Vr"] == 12
    assert ha.parameters["T"] == 1e-05
    assert ha.parameters["D"] == 0.51667
    assert ha.location_names == ("closed", "open")
    loc, init = ha.initial
    assert loc == "closed"
    assert eval_condition(init, Valuation("closed", {"i": 0, "v": 0, "t": 0}))
    assert not eval_condition(init, Valuation("closed", {"i": 0, "v": 0.1, "t": 0}))


def test_buck_transitions():
    ha = load_haslac(data("buck.ha"))
    pairs = {(t.source, t.target) for t in ha.transitions}
    assert pairs == {("closed", "open"), ("open", "closed")}
    co = next(t for t in ha.transitions if t.source == "closed")
    assert str(co.guard) == "t >= D*T"
    assert str(co.reset["t"]) == "0"


def test_minimal_module():
    ha = parse_haslac(MINIMAL)
    assert len(ha.locations) == 1
    assert ha.transitions == ()
    assert ha.locations[0].invariant.is_true


def test_truncated_text_names_last_line():
    text = MINIMAL.replace("endmodule\n", "")
    with pytest.raises(ParseError) as ei:
        parse_haslac(text)
    assert ei.value.line == text.rstrip("\n").count("\n") + 1


def test_nonlinear_flow_rejected():
    with pytest.raises(NonAffineError):
        parse_haslac(MINIMAL.replace("ddt x = 1", "ddt x = x*x"))


def test_missing_ddt_is_error():
    text = MINIMAL.replace("module m(x)", "module m(x, y)")
    with pytest.raises(ParseError, match="y"):
        parse_haslac(text)


def test_state_keyword_alias():
    a = parse_haslac(MINIMAL)
    b = parse_haslac(MINIMAL.replace("mode == only", "state == only"))
    assert a == b


def test_output_declaration_ignored():
    a = parse_haslac(MINIMAL)
    b = parse_haslac(MINIMAL.replace("module m(x)\n", "module m(x)\n    output x;\n"))
    assert a == b


def test_parameter_order_irrelevant():
    text = open(data("buck.ha")).read()
    block = re.search(r"parameter\n(.*?);", text, re.S).group(1)
    items = [s.strip() for s in block.split(",")]
    swapped = text.replace(block, "\n        " + ",\n        ".join(reversed(items)))
    a, b = parse_haslac(text), parse_haslac(swapped)
    assert a.parameters == b.parameters
    assert a.locations == b.locations and a.transitions == b.transitions


def test_print_buck():
    text = print_haslac(load_haslac(data("buck.ha")))
    assert "property trans closed_open" in text
    assert "a10c*i + a11c*v + b1c*Vs" in text


def test_print_one_mode_block():
    text = print_haslac(parse_haslac(MINIMAL))
    assert len(re.findall(r"^\s*mode \w+$", text, re.M)) == 1


def test_transition_source_from_predicate_not_name():
    text = open(data("buck.ha")).read().replace("property trans closed_open",
                                                "property trans whatever_name")
    ha = parse_haslac(text)
    assert {(t.source, t.target) for t in ha.transitions} == {("closed", "open"),
                                                               ("open", "closed")}


@pytest.mark.parametrize("name", ["buck.ha", "ramp.ha", "ramp_set.ha", "expo.ha",
                                  "sx_tanks_twin.ha"])
def test_fixture_roundtrip(name):
    ha = load_haslac(data(name))
    text = print_haslac(ha)
    again = parse_haslac(text)
    assert again == ha
    assert print_haslac(again) == text


@settings(max_examples=25, deadline=None)
@given(st.integers(0, corpus.SIZE - 1))
def test_corpus_roundtrip(idx):
    ha = corpus.corpus()[idx].ha
    text = print_haslac(ha)
    assert parse_haslac(text) == ha
    assert print_haslac(parse_haslac(text)) == text

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from hafeat.errors import BindError, HafeatError, ParseError
from hafeat.expr import LinExpr
from hafeat.feature import (bind_feature_params, load_feature, parse_feature,
                            print_feature)

from conftest import data

SETTLING = open(data("settling.fia")).read()
MINIMAL = """feature f();
begin
  var f0;
  @+(x>=2), f0=$time |-> f = f0;
end
"""


def test_settling_structure():
    spec = parse_feature(SETTLING)
    assert spec.name == "settlingTime"
    assert spec.formals == ("Vr", "E")
    assert spec.locals == ("st",)
    assert len(spec.stages) == 3
    assert spec.compute == LinExpr.var("st")


def test_settling_windows_open():
    spec = parse_feature(SETTLING)
    for s in spec.stages[:-1]:
        assert s.delay_to_next.lower == 0 and s.delay_to_next.is_open
    assert spec.stages[-1].delay_to_next is None


def test_minimal_feature():
    spec = parse_feature(MINIMAL)
    assert len(spec.stages) == 1
    assert spec.compute == LinExpr.var("f0")
    assert spec.stages[0].captures[0][0] == "f0"


def test_empty_delay_window():
    text = SETTLING.replace("##[0:$]\n  @+", "##[2:1]\n  @+", 1)
    with pytest.raises(ParseError, match="empty delay window"):
        parse_feature(text)


def test_falling_edge_rejected():
    with pytest.raises(ParseError, match="falling"):
        parse_feature(MINIMAL.replace("@+", "@-"))


def test_bind_settling():
    bf = bind_feature_params(parse_feature(SETTLING), {"Vr": 12, "E": 0.5})
    res = bf.resolved
    thresholds = set()
    for s in res.stages:
        for p in s.guard.conjuncts + tuple(c for e in s.events for c in e.predicate.conjuncts):
            if not p.is_mode:
                thresholds.add(p.rhs.constant)
    assert thresholds == {12.5}
    assert res.formals == ()


def test_bind_without_formals_is_identity():
    spec = parse_feature(MINIMAL)
    bf = bind_feature_params(spec, {})
    assert bf.resolved == spec


def test_bind_missing_names_formal():
    with pytest.raises(BindError, match="settlingTime.*E"):
        bind_feature_params(parse_feature(SETTLING), {"Vr": 12})


def test_bind_unknown_formal():
    with pytest.raises(BindError, match="Z"):
        bind_feature_params(parse_feature(MINIMAL), {"Z": 1})


def test_capture_of_undeclared_local():
    with pytest.raises(ParseError, match="undeclared local"):
        parse_feature(MINIMAL.replace("f0=$time", "g=$time"))


def test_print_parse_roundtrip():
    for name in ("settling.fia", "cross_time.fia", "half_time.fia"):
        spec = load_feature(data(name))
        assert parse_feature(print_feature(spec)) == spec


@settings(max_examples=40)
@given(st.floats(-50, 50, allow_nan=False).map(lambda x: round(x, 3)),
       st.floats(0, 5, allow_nan=False).map(lambda x: round(x, 3)))
def test_binding_commutes_with_parsing(vr, e):
    bound = bind_feature_params(parse_feature(SETTLING), {"Vr": vr, "E": e}).resolved
    text = (SETTLING.replace("settlingTime(Vr,E)", "settlingTime()")
            .replace("Vr+E", "(%r)+(%r)" % (vr, e)))
    assert parse_feature(text) == bound


@settings(max_examples=30)
@given(st.integers(1, 5))
def test_stage_count_follows_delimiters(n):
    stages = " ##[0:$] ".join("@+(x >= %d)" % k for k in range(n))
    text = "feature g();\nbegin\n  var a;\n  %s, a = $time\n    |-> g = a;\nend\n" % stages
    spec = parse_feature(text)
    assert len(spec.stages) == 1 + text.count("##")


@settings(max_examples=200, suppress_health_check=[HealthCheck.too_slow])
@given(st.data())
def test_parse_is_total(d):
    # any edit of a valid feature either parses or yields a positioned error
    i = d.draw(st.integers(0, len(SETTLING)))
    j = d.draw(st.integers(i, min(len(SETTLING), i + 12)))
    junk = d.draw(st.text(alphabet="()@+#[]:$,;=<>&|-x0 \n", max_size=4))
    text = SETTLING[:i] + junk + SETTLING[j:]
    try:
        parse_feature(text)
    except ParseError as err:
        assert err.line is not None
    except HafeatError as err:       # pragma: no cover - reported with context
        pytest.fail("unpositioned error: %s" % err)

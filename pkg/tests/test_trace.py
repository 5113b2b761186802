import json

import pytest
from hypothesis import given, settings, strategies as st

from hafeat.errors import TraceSchemaError
from hafeat.feature import bind_feature_params, load_feature, parse_feature
from hafeat.haslac import load_haslac
from hafeat.model import Valuation
from hafeat.reach import SimSettings, simulate
from hafeat.refine import parse_solver_trace
from hafeat.trace import (Sample, Trace, TraceStep, export_csv, feature_values_on_trace,
                          match_feature, read_trace_json, strip_null_tuples,
                          write_trace_json)

from conftest import data
from helpers import RAMP_FEATURE


def step(i, mode, t0, t1, pts=None, null=False):
    pts = [] if null else (pts or [(t0, {"x": t0}), (t1, {"x": t1})])
    return TraceStep(i, mode, t0, t1, tuple(Sample(t, v) for t, v in pts), null)


def bound(text_or_path, **b):
    spec = parse_feature(text_or_path) if "feature" in text_or_path else load_feature(text_or_path)
    return bind_feature_params(spec, b)


class TestStrip:
    def test_middle_null_removed_and_reindexed(self):
        tr = Trace((step(0, "a", 0, 1), step(1, "u", 1, 1, null=True), step(2, "b", 1, 2)))
        out = strip_null_tuples(tr)
        assert [s.index for s in out.steps] == [0, 1]
        assert [s.mode for s in out.steps] == ["a", "b"]
        assert out.steps[1].samples == tr.steps[2].samples

    def test_no_nulls_identity(self):
        tr = Trace((step(0, "a", 0, 1), step(1, "b", 1, 2)), model="m")
        assert strip_null_tuples(tr) == tr

    def test_all_null(self):
        tr = Trace((step(0, "u", 0, 0, null=True), step(1, "u", 0, 0, null=True)))
        out = strip_null_tuples(tr)
        assert out.steps == ()
        assert out.meta.get("all_null") is True


class TestReplay:
    def test_ramp_crossing(self):
        ha = load_haslac(data("ramp.ha"))
        tr = simulate(ha, Valuation("run", {"x": 0.0}), SimSettings(1e-3, 3.0, 0))
        vals = feature_values_on_trace(tr, bound(RAMP_FEATURE))
        assert len(vals) == 1
        assert vals[0] == pytest.approx(2.0, abs=1e-3)

    def test_no_match(self):
        tr = Trace((step(0, "run", 0, 1),))
        assert feature_values_on_trace(tr, bound(RAMP_FEATURE)) == []

    def test_settling_synthetic(self):
        # v falls below Vr+E while closed, then two entries into open
        pts = {
            "closed": [(0.0, 13.0), (0.5, 12.6), (1.0, 12.2)],
            "open": [(1.0, 12.2), (2.0, 12.1)],
            "closed2": [(2.0, 12.1), (3.0, 12.0)],
            "open2": [(3.0, 12.0), (4.0, 12.0)],
        }
        steps = []
        for i, (name, p) in enumerate(pts.items()):
            mode = name.rstrip("2")
            steps.append(TraceStep(i, mode, p[0][0], p[-1][0],
                                   tuple(Sample(t, {"v": v, "i": 0.0, "t": 0.0}) for t, v in p)))
        vals = feature_values_on_trace(Trace(tuple(steps)), bound(data("settling.fia"),
                                                                 Vr=12, E=0.5))
        assert vals == [1.0]

    def test_match_cap_flag(self):
        # x oscillates, so every upward crossing of 0.5 starts a match
        f = bound("feature g();\nbegin\n  var a;\n  @+(x >= 0.5), a = $time |-> g = a;\nend\n")
        pts = [(k / 10, {"x": float(k % 2)}) for k in range(11)]
        full = match_feature(Trace((step(0, "run", 0, 1, pts),)), f)
        assert len(full.values) == 5 and not full.truncated
        res = match_feature(Trace((step(0, "run", 0, 1, pts),)), f, cap=3)
        assert res.truncated and len(res.values) == 3


class TestJson:
    def test_roundtrip(self):
        tr = Trace((step(0, "a", 0, 1), step(1, "b", 1, 2)), "simulation", "m", {"k": 1})
        assert read_trace_json(write_trace_json(tr)) == tr

    def test_missing_mode(self):
        doc = json.loads(write_trace_json(Trace((step(0, "a", 0, 1), step(1, "b", 1, 2)))))
        del doc["steps"][1]["mode"]
        with pytest.raises(TraceSchemaError, match=r"steps\[1\]\.mode"):
            read_trace_json(json.dumps(doc))

    def test_solver_sample_file(self):
        tr = parse_solver_trace(open(data("solver_trace_sample.json")).read())
        assert len(tr.steps) == 3
        assert [s.is_null for s in tr.steps] == [False, True, False]
        first = tr.steps[0].samples[0]
        assert first.values["x"] == pytest.approx(0.001)
        assert first.widths["x"] == pytest.approx(0.002)
        last = tr.steps[2].samples[-1]
        assert last.values["feat"] == pytest.approx(2.0)
        assert last.widths["feat"] == pytest.approx(0.02)
        # widths survive the canonical JSON form
        again = read_trace_json(write_trace_json(tr))
        assert again.steps[2].samples[-1].widths == last.widths

    def test_solver_empty(self):
        assert parse_solver_trace('{"traces": []}').steps == ()


def test_csv_columns():
    tr = Trace((step(0, "a", 0, 1), step(1, "b", 1, 2)))
    lines = export_csv(tr).splitlines()
    assert lines[0] == "time,mode,x"
    assert lines[1] == "0,a,0"
    # the jump instant appears once, with the post-jump mode
    assert [l.split(",")[1] for l in lines[1:]] == ["a", "b", "b"]


# -- properties -------------------------------------------------------------

@st.composite
def traces(draw):
    n = draw(st.integers(0, 12))
    steps, t = [], 0.0
    for i in range(n):
        if draw(st.booleans()) and draw(st.booleans()):
            steps.append(step(i, "u", t, t, null=True))
            continue
        d = draw(st.floats(0.01, 2.0))
        x = draw(st.floats(-1e6, 1e6, allow_nan=False))
        steps.append(TraceStep(i, draw(st.sampled_from("abc")), t, t + d,
                               (Sample(t, {"x": x}), Sample(t + d, {"x": x + d}))))
        t += d
    return Trace(tuple(steps), draw(st.sampled_from(["simulation", "solver"])), "m")


@given(traces())
def test_strip_properties(tr):
    out = strip_null_tuples(tr)
    assert not any(s.is_null for s in out.steps)
    assert [s.index for s in out.steps] == list(range(len(out.steps)))
    kept = [s for s in tr.steps if not s.is_null]
    assert [(s.mode, s.t0, s.t1, s.samples) for s in out.steps] == \
        [(s.mode, s.t0, s.t1, s.samples) for s in kept]
    assert strip_null_tuples(out) == out


@settings(max_examples=50)
@given(traces())
def test_json_roundtrip_identity(tr):
    assert read_trace_json(write_trace_json(tr)) == tr

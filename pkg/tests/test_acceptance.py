"""Acceptance criteria 1-10; each test prints one PASS/FAIL line."""

import math
import os
import random
import time

import pytest

from hafeat.cli import cmd_evaluate, cmd_refine, main
from hafeat.config import ToolConfig
from hafeat.feature import bind_feature_params, load_feature
from hafeat.haslac import load_haslac, parse_haslac, print_haslac
from hafeat.model import Valuation
from hafeat.monitor import build_product
from hafeat.reach import SimSettings, simulate
from hafeat.refine import RefineSettings, emit_drh
from hafeat.trace import (Sample, Trace, TraceStep, feature_values_on_trace,
                          read_trace_json, strip_null_tuples, write_trace_json)

from conftest import data
import checks
import corpus
import drh_grammar


@pytest.fixture
def verdict(capsys, request):
    """Print one line per criterion, then fail the test if it did not hold."""
    def record(n, ok, detail):
        with capsys.disabled():
            print("\ncriterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", detail))
        assert ok, "criterion %d: %s" % (n, detail)
    return record


def tool(tmp_path, **kw):
    return ToolConfig(workspace_dir=str(tmp_path / "ws"), **kw)


def test_c01_ramp_point_start(tmp_path, verdict):
    t0 = time.perf_counter()
    rep = cmd_evaluate(data("ramp.ha"), data("cross_time.fia"), {"th": 2},
                       tool(tmp_path, horizon=3.0, step=1e-3, jumps=2))
    dt = time.perf_counter() - t0
    lo, hi = rep.data["range"]
    ok = lo <= 2.0 <= hi and hi - lo <= 4e-3 and dt < 5.0
    verdict(1, ok, "range [%.6f, %.6f] width %.2e in %.2f s" % (lo, hi, hi - lo, dt))


def test_c02_ramp_set_refined(tmp_path, verdict):
    eps, step = 0.01, 1e-3
    t0 = time.perf_counter()
    rep = cmd_refine(data("ramp_set.ha"), data("cross_time.fia"), {"th": 2},
                     tool(tmp_path, horizon=3.0, step=step, jumps=2, eps=eps,
                          oracle="builtin", sample_budget=200))
    dt = time.perf_counter() - t0
    lo, hi = rep.data["refined"]
    ok = abs(lo - 1.5) <= 0.02 and abs(hi - 2.0) <= 0.02 and dt < 30.0
    spec = bind_feature_params(load_feature(data("cross_time.fia")), {"th": 2})
    replay = {}
    for side, corner in (("low", lo), ("high", hi)):
        w = rep.data["witnesses"][side]
        if w is None:
            ok = False
            continue
        with open(os.path.join(rep.run_dir, w["json"])) as fh:
            vals = feature_values_on_trace(read_trace_json(fh.read()), spec)
        replay[side] = vals
        ok = ok and any(abs(v - corner) <= eps + 2 * step for v in vals)
    verdict(2, ok, "refined [%.5f, %.5f] in %.2f s, witness replay %s"
            % (lo, hi, dt, {k: [round(v, 5) for v in vs] for k, vs in replay.items()}))


def test_c03_exponential(tmp_path, verdict):
    step = 1e-3
    rep = cmd_evaluate(data("expo.ha"), data("half_time.fia"), {"th": 0.5},
                       tool(tmp_path, horizon=2.0, step=step, jumps=2))
    lo, hi = rep.data["range"]
    ok = lo <= math.log(2) <= hi and hi - lo <= 4 * step
    verdict(3, ok, "range [%.6f, %.6f] vs ln 2 = %.6f" % (lo, hi, math.log(2)))


def test_c04_containment(verdict):
    bad_s = bad_v = n_s = n_v = 0
    for idx in range(corpus.SIZE):
        a, b, c, d = checks.containment(idx)
        bad_s, bad_v, n_s, n_v = bad_s + a, bad_v + b, n_s + c, n_v + d
    verdict(4, bad_s == 0 and bad_v == 0 and n_v > 0,
            "%d/%d states outside flowpipe, %d/%d values outside range over %d automata"
            % (bad_s, n_s, bad_v, n_v, corpus.SIZE))


def test_c05_refinement_containment(verdict):
    outside, over = [], []
    statuses = {}
    for idx in range(corpus.SIZE):
        inside, lo_calls, hi_calls, bound, status = checks.refinement(idx)
        statuses[status] = statuses.get(status, 0) + 1
        if not inside:
            outside.append(idx)
        if max(lo_calls, hi_calls) > bound:
            over.append((idx, lo_calls, hi_calls, bound))
    verdict(5, not outside and not over,
            "refined range outside initial: %s; call bound exceeded: %s; statuses %s"
            % (outside, over, dict(sorted(statuses.items()))))


def test_c06_oracle_equivalence(verdict):
    bad = n = 0
    for idx in range(corpus.SIZE):
        b, k = checks.oracle_equivalence(idx)
        bad, n = bad + b, n + k
    verdict(6, bad == 0 and n > 0, "%d mismatches over %d accepting runs" % (bad, n))


def _fuzz_trace(rng):
    steps, t = [], 0.0
    for i in range(rng.randint(0, 15)):
        if rng.random() < 0.3:
            steps.append(TraceStep(i, "u", t, t, (), True))
            continue
        d = rng.uniform(0.01, 1.0)
        x = rng.uniform(-10, 10)
        steps.append(TraceStep(i, rng.choice("abc"), t, t + d,
                               (Sample(t, {"x": x}), Sample(t + d, {"x": x + d}))))
        t += d
    return Trace(tuple(steps), "solver", "fuzz")


def test_c07_null_tuples(verdict):
    rng = random.Random(7)
    failures = 0
    for _ in range(1000):
        tr = _fuzz_trace(rng)
        out = strip_null_tuples(tr)
        kept = [(s.mode, s.t0, s.t1, s.samples) for s in tr.steps if not s.is_null]
        ok = (not any(s.is_null for s in out.steps)
              and [(s.mode, s.t0, s.t1, s.samples) for s in out.steps] == kept
              and [s.index for s in out.steps] == list(range(len(out.steps)))
              and strip_null_tuples(out) == out)
        failures += not ok
    verdict(7, failures == 0, "%d/1000 fuzzed traces failed" % failures)


def test_c08_round_trips(verdict):
    print_fail = json_fail = 0
    for case in corpus.corpus():
        text = print_haslac(case.ha)
        again = parse_haslac(text)
        if again != case.ha or print_haslac(again) != text:
            print_fail += 1
        tr = simulate(case.ha, checks.start_point(case.ha), case.settings)
        if read_trace_json(write_trace_json(tr)) != tr:
            json_fail += 1
    gaps = {name: checks.twin_gap(name) for name in checks.SX_TWINS}
    ok = print_fail == 0 and json_fail == 0 and all(g <= 1e-6 for g in gaps.values())
    verdict(8, ok, "print/parse failures %d, JSON failures %d, SX twin gaps %s"
            % (print_fail, json_fail, gaps))


def test_c09_drh_and_missing_solver(tmp_path, capsys, verdict):
    pm = build_product(load_haslac(data("ramp.ha")), bind_feature_params(
        load_feature(data("cross_time.fia")), {"th": 2}))
    rs = RefineSettings(K=2, eps=0.01, time_horizon=3.0, step=1e-3)
    info = drh_grammar.check(emit_drh(pm, 1.9, 2.1, rs))
    goals = [g for _, g in info["goals"]]
    ok = (len(info["modes"]) == len(pm.automaton.locations)
          and any("feat >= 1.9" in g and "feat <= 2.1" in g for g in goals))
    conf = tmp_path / "tool.cfg"
    conf.write_text("workspace = ws\noracle = external\n")
    code = main(["refine", "--model", data("ramp_set.ha"), "--feature",
                 data("cross_time.fia"), "--bind", "th=2", "--horizon", "3",
                 "--step", "1e-3", "--jumps", "2", "--config", str(conf)])
    err = capsys.readouterr().err
    ok = ok and code == 3 and "'solver'" in err
    verdict(9, ok, "%d mode blocks, goals %s; missing solver -> exit %d: %s"
            % (len(info["modes"]), goals, code, err.strip()))


def test_c10_buck_smoke(verdict):
    ha = load_haslac(data("buck.ha"))
    s = SimSettings(1e-7, 5e-4, 100_000)
    tr = simulate(ha, Valuation("closed", {"v": 0.0, "i": 0.0, "t": 0.0}), s)
    switch = tr.steps[1]
    ok = (tr.steps[0].mode, switch.mode) == ("closed", "open")
    ok = ok and abs(switch.t0 - 5.1667e-6) <= 1e-12 and switch.samples[0].values["t"] == 0.0
    spec = bind_feature_params(load_feature(data("settling.fia")), {"Vr": 12, "E": 0.5})
    vals = feature_values_on_trace(tr, spec)
    pm = build_product(ha, spec)
    ptr = simulate(pm, Valuation("closed", {"v": 0.0, "i": 0.0, "t": 0.0}), s,
                   stop_at_accept=True)
    ok = ok and len(vals) >= 1 and ptr.meta["end"] == "accept"
    verdict(10, ok, "switch at %.6e with t reset to %g; settlingTime matches %s"
            % (switch.t0, switch.samples[0].values["t"], [round(v, 9) for v in vals[:3]]))

import math
import os
import re

import pytest
from hypothesis import given, settings, strategies as st

from hafeat.errors import RefinementError, SolverError
from hafeat.feature import bind_feature_params, load_feature, parse_feature
from hafeat.haslac import load_haslac
from hafeat.monitor import build_product
from hafeat.model import Valuation
from hafeat.reach import FeatureRange, SimSettings, initial_feature_range, simulate
from hafeat.refine import (SAT, UNKNOWN, UNSAT, BuiltinOracle, RefineSettings, emit_drh,
                           feasible, make_oracle, refine_corner, refine_range, suggest_K)
from hafeat.trace import feature_values_on_trace

from conftest import HERE, data
from helpers import RAMP_FEATURE
import corpus
import drh_grammar

FAKE = os.path.join(HERE, "fake_solver.py")


def ramp(name="ramp.ha"):
    return build_product(load_haslac(data(name)),
                         bind_feature_params(parse_feature(RAMP_FEATURE), {}))


def rs(**kw):
    base = dict(K=1, eps=0.01, time_horizon=3.0, step=1e-3, sample_budget=40)
    base.update(kw)
    return RefineSettings(**base)


class TestFeasible:
    def test_sat_near_crossing(self):
        f = feasible(ramp(), 1.9, 2.1, rs())
        assert f.verdict == SAT
        assert f.witness_value == pytest.approx(2.0, abs=1e-3)
        assert feature_values_on_trace(f.witness, ramp().feature)[0] == \
            pytest.approx(f.witness_value, abs=2e-3)

    def test_unsat_above(self):
        assert feasible(ramp(), 3.0, 4.0, rs()).verdict == UNSAT

    def test_empty_interval(self):
        with pytest.raises(RefinementError):
            feasible(ramp(), 2.0, 1.0, rs())

    def test_no_budget_is_unknown(self):
        pm = ramp("ramp_set.ha")
        f = feasible(pm, 1.6, 1.7, rs(sample_budget=0))
        assert f.verdict == UNKNOWN and f.witness is None


class TestCorner:
    def test_low_corner(self):
        pm = ramp("ramp_set.ha")
        s = rs()
        rng = initial_feature_range(pm, s.sim)
        value, witness = refine_corner(pm, rng, "low", s)
        assert value == pytest.approx(1.5, abs=0.01)
        start = witness.steps[0].samples[0].values["x"]
        assert start == pytest.approx(0.5, abs=0.01)

    def test_degenerate_range(self):
        pm = ramp()
        s = rs()
        oracle = make_oracle(pm, s)
        value, witness = refine_corner(pm, FeatureRange(2.0, 2.0), "low", s, oracle)
        assert value == 2.0
        assert oracle.calls == 0
        assert witness is not None

    def test_eps_equal_width_one_call(self):
        pm = ramp("ramp_set.ha")
        s0 = rs()
        rng = initial_feature_range(pm, s0.sim)
        s = rs(eps=rng.width * (1 + 1e-12))
        oracle = make_oracle(pm, s)
        refine_corner(pm, FeatureRange(rng.lo, rng.hi), "high", s, oracle)
        assert oracle.calls <= 1

    def test_bad_side(self):
        with pytest.raises(ValueError):
            refine_corner(ramp(), FeatureRange(1.0, 3.0), "middle", rs())


class TestRange:
    def test_ramp_set(self):
        pm = ramp("ramp_set.ha")
        s = rs()
        rng = initial_feature_range(pm, s.sim)
        rr = refine_range(pm, rng, s)
        assert rr.lo_star == pytest.approx(1.5, abs=0.01)
        assert rr.hi_star == pytest.approx(2.0, abs=0.01)
        assert rr.lo_witness is not None and rr.hi_witness is not None
        assert rr.lo_witness != rr.hi_witness
        assert rr.initial == rng

    def test_point_start(self):
        pm = ramp()
        s = rs()
        rr = refine_range(pm, initial_feature_range(pm, s.sim), s)
        assert rr.hi_star - rr.lo_star <= s.eps

    def test_unknown_only_keeps_range(self):
        pm = ramp("ramp_set.ha")
        s = rs(sample_budget=0)
        rng = initial_feature_range(pm, s.sim)
        rr = refine_range(pm, rng, s)
        assert (rr.lo_star, rr.hi_star) == (rng.lo, rng.hi)
        assert rr.iterations >= 1
        assert rr.status == "failed"

    def test_monotone_bracket(self):
        pm = ramp("ramp_set.ha")
        s = rs()
        oracle = BuiltinOracle(pm, s)
        seen = []
        inner = oracle.feasible

        def spy(a, b, prefer=None):
            seen.append((prefer, a, b))
            return inner(a, b, prefer)
        oracle.feasible = spy
        refine_range(pm, initial_feature_range(pm, s.sim), s, oracle)
        for side in ("low", "high"):
            qs = [(a, b) for p, a, b in seen if p == side]
            for (a0, b0), (a1, b1) in zip(qs, qs[1:]):
                assert a1 >= a0 and b1 <= b0

    def test_suggest_k(self):
        pm = build_product(load_haslac(data("buck.ha")), bind_feature_params(
            load_feature(data("settling.fia")), {"Vr": 12, "E": 0.5}))
        s = SimSettings(1e-7, 3e-5, 1000)
        tr = simulate(pm, Valuation("closed", {"v": 0.0, "i": 0.0, "t": 0.0}), s)
        assert suggest_K(pm, s) == tr.meta["jumps"] + 2


@settings(max_examples=10, deadline=None)
@given(st.integers(0, corpus.SIZE - 1), st.floats(0, 1), st.floats(0.02, 0.5))
def test_sat_witness_replays_inside(idx, pos, frac):
    pm = corpus.product_of(idx)
    case = corpus.corpus()[idx]
    s = RefineSettings(K=corpus.K, time_horizon=corpus.HORIZON, step=corpus.STEP,
                       sample_budget=20, seed=idx, finer=0)
    rng = initial_feature_range(pm, case.settings)
    if rng.empty:
        return
    w = max(rng.width * frac, 1e-3)
    a = rng.lo + pos * max(rng.width - w, 0.0)
    f = feasible(pm, a, a + w, s)
    if f.verdict == SAT:
        vals = feature_values_on_trace(f.witness, pm.feature)
        assert any(a - 2 * s.step <= v <= a + w + 2 * s.step for v in vals)
    if f.verdict == UNSAT:
        assert f.witness is None


class TestDrh:
    def test_ramp_structure(self):
        pm = ramp()
        text = emit_drh(pm, 1.9, 2.1, rs())
        info = drh_grammar.check(text)
        assert len(info["modes"]) == len(pm.automaton.locations) == 2
        goal = info["goals"][0][1]
        assert "feat >= 1.9" in goal and "feat <= 2.1" in goal

    def test_registers_constant(self):
        text = emit_drh(ramp(), 1.9, 2.1, rs())
        blocks = re.findall(r"\{ mode \d+;.*?\n\}", text, re.S)
        assert blocks and all("d/dt[feat] = 0;" in b for b in blocks)

    def test_buck_flow_text(self):
        pm = build_product(load_haslac(data("buck.ha")), bind_feature_params(
            load_feature(data("settling.fia")), {"Vr": 12, "E": 0.5}))
        text = emit_drh(pm, 1e-4, 2e-4, rs(time_horizon=5e-5, step=1e-7, K=8))
        assert "a10c*i + a11c*v + b1c*Vs" in text
        assert "#define D 0.51667" in text
        drh_grammar.check(text)

    def test_rejects_bad_text(self):
        with pytest.raises(drh_grammar.DrhSyntaxError):
            drh_grammar.check(emit_drh(ramp(), 1.9, 2.1, rs()).replace("==>", "=>"))


class TestExternal:
    def settings(self, tmp_path, **kw):
        return rs(oracle="external", solver=FAKE, workdir=str(tmp_path), K=3, **kw)

    def test_sat_witness(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAKE_SOLVER_MODE", "sat")
        s = self.settings(tmp_path)
        f = feasible(ramp(), 1.9, 2.1, s)
        assert f.verdict == SAT
        assert f.witness_value == pytest.approx(2.0)
        assert f.witness.steps[0].mode == "run"
        args = open(next(tmp_path.glob("query_*/args.txt"))).read().split()
        assert args[:2] == ["-k", "3"] and "--precision" in args

    def test_unsat(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAKE_SOLVER_MODE", "unsat")
        assert feasible(ramp(), 1.9, 2.1, self.settings(tmp_path)).verdict == UNSAT

    def test_malformed_output(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAKE_SOLVER_MODE", "silent")
        with pytest.raises(SolverError, match="neither"):
            feasible(ramp(), 1.9, 2.1, self.settings(tmp_path))

    def test_missing_solver(self, tmp_path):
        s = rs(oracle="external", solver=str(tmp_path / "no-such-dreach"))
        with pytest.raises(SolverError, match="'solver'") as ei:
            feasible(ramp(), 1.9, 2.1, s)
        assert ei.value.exit_code == 3

    def test_unconfigured_solver(self):
        with pytest.raises(SolverError, match="'solver'"):
            feasible(ramp(), 1.9, 2.1, rs(oracle="external"))

    def test_hybrid_prefers_builtin(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAKE_SOLVER_MODE", "silent")
        s = rs(oracle="hybrid", solver=FAKE, workdir=str(tmp_path))
        assert feasible(ramp(), 3.0, 4.0, s).verdict == UNSAT
        assert not list(tmp_path.glob("query_*"))

    def test_refine_with_fake_solver(self, tmp_path, monkeypatch):
        # the fake answers sat with feat at the goal midpoint, so bisection
        # walks each corner to the initial bound
        monkeypatch.setenv("FAKE_SOLVER_MODE", "sat")
        pm = ramp("ramp_set.ha")
        s = self.settings(tmp_path)
        rng = initial_feature_range(pm, s.sim)
        rr = refine_range(pm, rng, s)
        bound = math.ceil(math.log2(rng.width / s.eps)) + 2
        assert rr.lo_calls <= bound and rr.hi_calls <= bound
        assert rng.lo <= rr.lo_star <= rr.hi_star <= rng.hi

"""Corner refinement of feature ranges.

A feasibility oracle answers whether some run reaches an accepting location
with ``feat`` in ``[a, b]`` within K jumps. Bisection on each corner of the
initial range drives it. Two oracles exist:

* builtin: a flowpipe proves UNSAT, sampled simulations prove SAT;
* external: a dReach-compatible solver fed with emitted ``.drh`` text.

``hybrid`` asks the builtin oracle first and falls back to the solver when
it cannot decide.
"""

import glob
import json
import logging
import math
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import RefinementError, SolverError, TraceSchemaError
from .expr import format_number
from .model import Valuation
from .monitor import ProductModel
from .reach import (FeatureRange, MonitorPolicy, SimSettings, compile_model, flowpipe,
                    simulate)
from .trace import Sample, Trace, TraceStep, feature_values_on_trace, strip_null_tuples

log = logging.getLogger(__name__)

SAT = "SAT"
UNSAT = "UNSAT"
UNKNOWN = "UNKNOWN"
ORACLES = ("builtin", "external", "hybrid")


@dataclass(frozen=True)
class RefineSettings:
    K: int = 10
    eps: float = 1e-2
    oracle: str = "builtin"
    time_horizon: float = 1.0
    sample_budget: int = 100
    step: float = 1e-3
    precision: float = 1e-3
    seed: int = 0
    solver: str = None
    solver_sat: str = "sat"
    solver_unsat: str = "unsat"
    solver_timeout: float = 600.0
    workdir: str = None
    finer: int = 2              # extra flowpipes at step/4, step/16, ... for UNSAT
    finer_max_steps: int = 10_000   # skip finer flowpipes longer than this

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise RefinementError("K must be a non-negative integer")
        if not self.eps > 0:
            raise RefinementError("eps must be positive")
        if self.oracle not in ORACLES:
            raise RefinementError("oracle must be one of %s" % ", ".join(ORACLES))
        if self.sample_budget < 0:
            raise RefinementError("sample_budget must be >= 0")
        if not self.precision > 0:
            raise RefinementError("precision must be positive")
        if self.finer < 0:
            raise RefinementError("finer must be >= 0")

    @property
    def sim(self):
        return SimSettings(self.step, self.time_horizon, int(self.K))


@dataclass
class Feasibility:
    verdict: str
    witness: Trace = None
    witness_value: float = None
    detail: str = ""

    def __post_init__(self):
        if self.verdict == SAT and self.witness is None:
            raise ValueError("SAT verdict without a witness")
        if self.verdict != SAT and self.witness is not None:
            raise ValueError("only SAT verdicts carry a witness")


@dataclass
class RefinedRange:
    lo_star: float
    hi_star: float
    lo_witness: Trace
    hi_witness: Trace
    iterations: int
    lo_calls: int = 0
    hi_calls: int = 0
    lo_value: float = None
    hi_value: float = None
    initial: FeatureRange = None
    status: str = "ok"          # ok | partial | failed

    @property
    def width(self):
        return self.hi_star - self.lo_star


###############################################################################
# Builtin oracle
###############################################################################

class BuiltinOracle:
    """Flowpipe for UNSAT, simulation sampling for SAT; both computed once."""

    def __init__(self, pm, rs):
        if not isinstance(pm, ProductModel):
            raise TypeError("oracle needs a ProductModel")
        self.pm = pm
        self.rs = rs
        self.calls = 0
        self._boxes = {}
        self._pool = None

    # -- sound UNSAT half ------------------------------------------------
    def feat_boxes(self, level=0):
        """feat intervals on entry to accept, from a flowpipe at step/4**level."""
        if level not in self._boxes:
            sim = self.rs.sim
            sim = SimSettings(sim.step / 4 ** level, sim.horizon, sim.max_jumps)
            reach = flowpipe(self.pm, sim, stop_at_accept=True)
            i = reach.variables.index(self.pm.feat_var)
            self._boxes[level] = [(float(lo[i]), float(hi[i]))
                                  for _, _, lo, hi in reach.accept_entries]
        return self._boxes[level]

    def excluded(self, a, b):
        # a finer flowpipe is only built when the coarser ones cannot decide
        sim = self.rs.sim
        for level in range(self.rs.finer + 1):
            if level and sim.horizon / (sim.step / 4 ** level) > self.rs.finer_max_steps:
                break
            if not any(lo <= b and a <= hi for lo, hi in self.feat_boxes(level)):
                return True
        return False

    # -- SAT half --------------------------------------------------------
    def pool(self):
        """Every witness sampled so far (runs the whole budget)."""
        for _ in self._samples():
            pass
        return list(self._pool)

    def _samples(self):
        if self._pool is None:
            self._pool = []
            self._gen = iter_witnesses(self.pm, self.rs)
        for w in self._gen:
            self._pool.append(w)
            yield w

    def _pick(self, hits, prefer):
        if prefer == "low":
            return min(hits, key=lambda w: w[0])
        if prefer == "high":
            return max(hits, key=lambda w: w[0])
        return hits[0]

    def feasible(self, a, b, prefer=None):
        if a > b:
            raise RefinementError("empty query interval [%g, %g]" % (a, b))
        self.calls += 1
        if self._pool is None:
            list(zip(range(1), self._samples()))
        hits = [w for w in self._pool if a <= w[0] <= b]
        if not hits:
            if self.excluded(a, b):
                return Feasibility(UNSAT, detail="flowpipe")
            for w in self._samples():
                if a <= w[0] <= b:
                    hits.append(w)
                    break
        if hits:
            v, tr = self._pick(hits, prefer)
            return Feasibility(SAT, tr, v, "simulation")
        return Feasibility(UNKNOWN, detail="no sampled run and no proof")


def _start_points(cm, pm, budget, rng):
    lo, hi = cm.initial_box()
    model_idx = [cm.index[v] for v in pm.model.variables]
    free = [i for i in model_idx if hi[i] > lo[i]]
    mid = (lo + hi) / 2
    pts = [mid]
    if free and len(free) <= 10:
        for mask in range(2 ** len(free)):
            x = mid.copy()
            for bit, i in enumerate(free):
                x[i] = hi[i] if mask >> bit & 1 else lo[i]
            pts.append(x)
    while len(pts) < budget:
        x = mid.copy()
        for i in free:
            x[i] = rng.uniform(lo[i], hi[i])
        pts.append(x)
    return pts[:max(budget, 0)], lo, hi


def _policies(pm, horizon, rng):
    spec = pm.feature.resolved if pm.feature is not None else None
    if spec is None:
        return
    events = [k for k, s in enumerate(spec.stages) if s.events]
    levels = [k for k, s in enumerate(spec.stages) if not s.events]
    while True:
        skip, delay = {}, {}
        if events and (not levels or rng.random() < 0.5):
            skip[int(rng.choice(events))] = int(rng.integers(1, 4))
        elif levels:
            delay[int(rng.choice(levels))] = float(rng.uniform(0, horizon / 2))
        else:
            return
        yield MonitorPolicy(skip, delay)


def sample_witnesses(pm, rs):
    """Validated (value, projected trace) pairs from sampled product runs."""
    return list(iter_witnesses(pm, rs))


def iter_witnesses(pm, rs):
    """Generate validated (value, projected trace) pairs, one run at a time.

    Runs start from the middle and the vertices of the initial box, then
    random points; the second half of the budget perturbs the monitor
    (skipped rising edges, delayed level stages).
    """
    cm = compile_model(pm)
    rng = np.random.default_rng(rs.seed)
    budget = int(rs.sample_budget)
    if budget <= 0:
        return
    pts, lo, hi = _start_points(cm, pm, (budget + 1) // 2, rng)
    runs = [(x, MonitorPolicy()) for x in pts]
    pol = _policies(pm, rs.time_horizon, rng)
    while len(runs) < budget:
        p = next(pol, None)
        if p is None:
            break
        runs.append((pts[int(rng.integers(len(pts)))], p))
    tol = 2 * rs.step
    model_vars = set(pm.model.variables)
    loc = pm.model.initial[0]
    for x, policy in runs:
        values = {v: float(x[cm.index[v]]) for v in model_vars}
        tr = simulate(pm, Valuation(loc, values, 0.0), rs.sim, policy, stop_at_accept=True)
        if tr.meta["end"] != "accept":
            continue
        feat = tr.final().values[pm.feat_var]
        proj = pm.project(tr)
        replayed = feature_values_on_trace(proj, pm.feature)
        if not replayed:
            log.debug("accepting run without a replayed match; discarded")
            continue
        v = min(replayed, key=lambda r: abs(r - feat))
        if abs(v - feat) > tol:
            log.debug("product value %g disagrees with replay %g; discarded", feat, v)
            continue
        meta = dict(proj.meta, witness_value=v, start=values,
                    policy={"skip": policy.skip, "delay": policy.delay})
        yield float(v), Trace(proj.steps, proj.source, proj.model, meta)


def suggest_K(pm, settings):
    """Jumps of a simulation from the middle of the initial set, plus two."""
    cm = compile_model(pm)
    lo, hi = cm.initial_box()
    mid = (lo + hi) / 2
    model = pm.model if isinstance(pm, ProductModel) else pm
    values = {v: float(mid[cm.index[v]]) for v in model.variables}
    tr = simulate(pm, Valuation(model.initial[0], values, 0.0), settings)
    return tr.meta["jumps"] + 2


###############################################################################
# External oracle
###############################################################################

class ExternalOracle:
    def __init__(self, pm, rs):
        self.pm = pm
        self.rs = rs
        self.calls = 0
        self._ranges = None

    def ranges(self):
        if self._ranges is None:
            self._ranges = variable_ranges(self.pm, self.rs)
        return self._ranges

    def feasible(self, a, b, prefer=None):
        if a > b:
            raise RefinementError("empty query interval [%g, %g]" % (a, b))
        self.calls += 1
        text = emit_drh(self.pm, a, b, self.rs, ranges=self.ranges())
        return run_solver(text, self.pm, self.rs)


class HybridOracle:
    def __init__(self, pm, rs):
        self.builtin = BuiltinOracle(pm, rs)
        self.external = ExternalOracle(pm, rs)

    @property
    def calls(self):
        return self.builtin.calls

    def feasible(self, a, b, prefer=None):
        f = self.builtin.feasible(a, b, prefer)
        if f.verdict != UNKNOWN:
            return f
        return self.external.feasible(a, b, prefer)


def make_oracle(pm, rs):
    return {"builtin": BuiltinOracle, "external": ExternalOracle,
            "hybrid": HybridOracle}[rs.oracle](pm, rs)


def feasible(pm, a, b, rs, oracle=None, prefer=None):
    """Is there a run of ``pm`` accepting with feat in [a, b] within K jumps?"""
    if a > b:
        raise RefinementError("empty query interval [%g, %g]" % (a, b))
    oracle = oracle or make_oracle(pm, rs)
    return oracle.feasible(a, b, prefer)


def _resolve_solver(rs):
    if not rs.solver:
        raise SolverError("no external solver configured; set config key 'solver' "
                          "to the dReach executable")
    path = shutil.which(rs.solver)
    if path is None:
        raise SolverError("external solver '%s' not found or not executable "
                          "(config key 'solver')" % rs.solver)
    return os.path.abspath(path)


def _verdict(stdout, rs):
    words = re.findall(r"[A-Za-z_]+", stdout.lower())
    if rs.solver_unsat.lower() in words:
        return UNSAT
    if rs.solver_sat.lower() in words:
        return SAT
    return None


def run_solver(text, pm, rs):
    """Run the configured solver on ``.drh`` text; parse verdict and trace."""
    exe = _resolve_solver(rs)
    base = rs.workdir or tempfile.gettempdir()
    os.makedirs(base, exist_ok=True)
    qdir = tempfile.mkdtemp(prefix="query_", dir=base)
    drh = os.path.join(qdir, "query.drh")
    with open(drh, "w", encoding="utf-8") as fh:
        fh.write(text)
    cmd = [exe, "-k", str(int(rs.K)), drh, "--precision", repr(float(rs.precision)),
           "--visualize"]
    try:
        proc = subprocess.run(cmd, cwd=qdir, capture_output=True, text=True,
                              timeout=rs.solver_timeout)
    except subprocess.TimeoutExpired:
        raise SolverError("solver timed out after %gs (config key 'solver_timeout')"
                          % rs.solver_timeout)
    except OSError as e:
        raise SolverError("cannot run solver '%s': %s (config key 'solver')" % (exe, e))
    verdict = _verdict(proc.stdout, rs)
    if verdict is None:
        raise SolverError("solver exited with code %d and printed neither '%s' nor '%s'"
                          % (proc.returncode, rs.solver_sat, rs.solver_unsat))
    if verdict == UNSAT:
        return Feasibility(UNSAT, detail="solver")
    files = sorted(glob.glob(os.path.join(qdir, "*.json")), key=os.path.getmtime)
    if not files:
        raise SolverError("solver reported sat but wrote no JSON trace in %s" % qdir)
    with open(files[-1], encoding="utf-8") as fh:
        raw = fh.read()
    names = {i + 1: n for i, n in enumerate(pm.automaton.location_names)}
    tr = strip_null_tuples(parse_solver_trace(raw, names))
    last = tr.final()
    if last is None or pm.feat_var not in last.values:
        raise SolverError("solver trace %s lacks variable '%s'" % (files[-1], pm.feat_var))
    value = float(last.values[pm.feat_var])
    proj = pm.project(tr)
    proj = Trace(proj.steps, proj.source, proj.model,
                 dict(proj.meta, witness_value=value, file=files[-1]))
    return Feasibility(SAT, proj, value, "solver")


###############################################################################
# Corner search
###############################################################################

def _plain_witness(pm, rs):
    cm = compile_model(pm)
    lo, hi = cm.initial_box()
    mid = (lo + hi) / 2
    values = {v: float(mid[cm.index[v]]) for v in pm.model.variables}
    tr = simulate(pm, Valuation(pm.model.initial[0], values, 0.0), rs.sim,
                  stop_at_accept=True)
    if tr.meta["end"] != "accept":
        return None, None
    proj = pm.project(tr)
    vals = feature_values_on_trace(proj, pm.feature)
    v = vals[0] if vals else tr.final().values[pm.feat_var]
    return proj, float(v)


def refine_corner(pm, rng, side, rs, oracle=None):
    """Bisect one corner of ``rng``; returns (corner value, witness trace).

    The returned value is the sound end of the final bracket (never inside a
    region that was not proven empty); the witness value lies within eps of
    it unless the search stopped on an UNKNOWN answer.
    """
    value, witness, _ = _refine_corner(pm, rng, side, rs, oracle or make_oracle(pm, rs))
    return value, witness


def _refine_corner(pm, rng, side, rs, oracle):
    if side not in ("low", "high"):
        raise ValueError("side must be 'low' or 'high'")
    if rng.empty:
        raise RefinementError("cannot refine an empty feature range")
    low = side == "low"
    bound = rng.lo if low else rng.hi
    if rng.hi - rng.lo <= rs.eps:
        w, v = _plain_witness(pm, rs)
        return bound, w, {"calls": 0, "value": v, "status": "ok"}
    start = oracle.calls
    f = oracle.feasible(rng.lo, rng.hi, side)
    if f.verdict != SAT:
        log.warning("no witness for %s corner in %s (%s); range kept", side, rng, f.verdict)
        return bound, None, {"calls": oracle.calls - start, "value": None, "status": "failed"}
    best = min(max(f.witness_value, rng.lo), rng.hi)
    witness, wval = f.witness, f.witness_value
    status = "ok"
    while abs(best - bound) > rs.eps:
        mid = (bound + best) / 2
        f = oracle.feasible(bound, mid, side) if low else oracle.feasible(mid, bound, side)
        if f.verdict == SAT:
            v = f.witness_value
            closer = v < best if low else v > best
            if closer:
                witness, wval = f.witness, v
                best = max(v, bound) if low else min(v, bound)
            if (best > mid) if low else (best < mid):
                status = "stalled"
                break
        elif f.verdict == UNSAT:
            bound = mid
        else:
            status = "unknown"
            break
    return bound, witness, {"calls": oracle.calls - start, "value": wval, "status": status}


def refine_range(pm, rng, rs, oracle=None):
    oracle = oracle or make_oracle(pm, rs)
    lo, lw, linfo = _refine_corner(pm, rng, "low", rs, oracle)
    hi, hw, hinfo = _refine_corner(pm, rng, "high", rs, oracle)
    statuses = {linfo["status"], hinfo["status"]}
    status = "ok" if statuses == {"ok"} else ("failed" if statuses == {"failed"} else "partial")
    return RefinedRange(lo, hi, lw, hw, linfo["calls"] + hinfo["calls"],
                        linfo["calls"], hinfo["calls"], linfo["value"], hinfo["value"],
                        rng, status)


###############################################################################
# .drh emission
###############################################################################

def variable_ranges(pm, rs):
    """Per-variable bounds from the flowpipe hull, inflated by 10%."""
    reach = flowpipe(pm, rs.sim, stop_at_accept=False)
    cm = compile_model(pm)
    ilo, ihi = cm.initial_box()
    out = {}
    for i, v in enumerate(reach.variables):
        lo, hi = reach.hull(v)
        lo, hi = min(lo, ilo[i]), max(hi, ihi[i])
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise RefinementError("variable '%s' has no finite range for .drh" % v)
        pad = 0.1 * (hi - lo) or max(1.0, 0.1 * abs(lo))
        out[v] = (lo - pad, hi + pad)
    return out


_DRH_REL = {"<=": "<=", "<": "<", ">=": ">=", ">": ">", "==": "="}


def _num(x):
    return format_number(x)


def _drh_porv(p):
    return "(%s %s %s)" % (p.lhs, _DRH_REL[p.relation], p.rhs)


def _drh_and(items):
    items = list(items)
    if not items:
        return "(true)"
    return "(and %s)" % " ".join(items)


def emit_drh(pm, a, b, rs, ranges=None):
    """Render the product as dReach ``.drh`` text with goal feat in [a, b]."""
    if a > b:
        raise RefinementError("empty goal interval [%g, %g]" % (a, b))
    ha = pm.automaton
    ranges = ranges or variable_ranges(pm, rs)
    numbers = {n: i + 1 for i, n in enumerate(ha.location_names)}
    out = []
    w = out.append
    for p, val in ha.parameters.items():
        w("#define %s %s" % (p, _num(val)))
    for v in ha.variables:
        lo, hi = ranges[v]
        w("[%s, %s] %s;" % (_num(lo), _num(hi), v))
    w("[0, %s] time;" % _num(rs.time_horizon))
    w("")
    for loc in ha.locations:
        w("{ mode %d;" % numbers[loc.name])
        w("  invt:")
        for p in loc.invariant.linear().conjuncts:
            w("    %s;" % _drh_porv(p))
        w("  flow:")
        for v in ha.variables:
            w("    d/dt[%s] = %s;" % (v, loc.flow[v]))
        w("  jump:")
        for t in ha.outgoing(loc.name):
            # rising edges become level guards: a sound over-approximation
            conds = list(t.guard.linear().conjuncts)
            if t.event is not None:
                conds += list(t.event.linear().conjuncts)
            resets = []
            for v in ha.variables:
                e = t.reset.get(v)
                resets.append("(%s' = %s)" % (v, e if e is not None else v))
            w("    %s ==> @%d %s;" % (_drh_and(_drh_porv(p) for p in conds),
                                      numbers[t.target], _drh_and(resets)))
        w("}")
        w("")
    init_loc, init_cond = ha.initial
    w("init:")
    w("@%d %s;" % (numbers[init_loc],
                   _drh_and(_drh_porv(p) for p in init_cond.linear().conjuncts)))
    w("")
    w("goal:")
    for acc in pm.accept_locations:
        w("@%d (and (%s >= %s) (%s <= %s));" % (numbers[acc], pm.feat_var, _num(a),
                                                pm.feat_var, _num(b)))
    return "\n".join(out) + "\n"


###############################################################################
# Solver JSON traces
###############################################################################

def parse_solver_trace(text, mode_names=None):
    """Read a solver JSON trace into a :class:`Trace`.

    Layout: ``{"traces": [[record, ...], ...]}`` with one inner list per
    variable (a single flat list is accepted too). A record is
    ``{"key": var, "mode": m, "step": k, "values": [{"time": [t0, t1],
    "enclosure": [lo, hi]}, ...]}``. Sample values are enclosure midpoints
    and widths are kept. A step whose records carry no values, or only
    zero-length time intervals, is a NULL step; so is a ``null`` record,
    which takes its position in the list as step number.
    """
    try:
        data = json.loads(text)
    except ValueError as e:
        raise TraceSchemaError("<json>", "malformed JSON: %s" % e)
    if not isinstance(data, dict) or "traces" not in data:
        raise TraceSchemaError("traces", "missing required field")
    groups = data["traces"]
    if not isinstance(groups, list):
        raise TraceSchemaError("traces", "expected a list")
    if groups and all(isinstance(g, dict) or g is None for g in groups):
        groups = [groups]
    steps = {}
    for gi, group in enumerate(groups):
        if not isinstance(group, list):
            raise TraceSchemaError("traces[%d]" % gi, "expected a list of records")
        for ri, rec in enumerate(group):
            path = "traces[%d][%d]" % (gi, ri)
            if rec is None:
                steps.setdefault(ri, {"mode": None, "vars": {}, "null": True})
                continue
            if not isinstance(rec, dict):
                raise TraceSchemaError(path, "expected an object")
            for key in ("key", "mode", "step", "values"):
                if key not in rec:
                    raise TraceSchemaError("%s.%s" % (path, key), "missing required field")
            k = rec["step"]
            if not isinstance(k, int) or isinstance(k, bool):
                raise TraceSchemaError(path + ".step", "expected an integer")
            entry = steps.setdefault(k, {"mode": rec["mode"], "vars": {}, "null": False})
            if entry["mode"] is None:
                entry["mode"] = rec["mode"]
            vals = rec["values"] or []
            if not isinstance(vals, list):
                raise TraceSchemaError(path + ".values", "expected a list")
            seq = []
            for vi, item in enumerate(vals):
                vp = "%s.values[%d]" % (path, vi)
                try:
                    t0, t1 = (float(x) for x in item["time"])
                    lo, hi = (float(x) for x in item["enclosure"])
                except (KeyError, TypeError, ValueError):
                    raise TraceSchemaError(vp, "expected time:[t0,t1] and enclosure:[lo,hi]")
                seq.append((t0, t1, lo, hi))
            entry["vars"][str(rec["key"])] = seq
    out = []
    for idx, k in enumerate(sorted(steps)):
        entry = steps[k]
        mode = entry["mode"]
        if mode_names and mode in mode_names:
            mode = mode_names[mode]
        mode = None if mode is None else str(mode)
        series = [s for s in entry["vars"].values() if s]
        times = sorted({t for s in series for seg in s for t in seg[:2]})
        null = entry["null"] or not series or times[0] == times[-1]
        samples = []
        if series:
            for t in times:
                values, widths = {}, {}
                for var, s in entry["vars"].items():
                    if not s:
                        continue
                    seg = next((g for g in s if g[0] <= t <= g[1]), s[-1])
                    values[var] = (seg[2] + seg[3]) / 2
                    widths[var] = seg[3] - seg[2]
                samples.append(Sample(t, values, widths))
        t0 = times[0] if times else (out[-1].t1 if out else 0.0)
        t1 = times[-1] if times else t0
        out.append(TraceStep(idx, mode, t0, t1, tuple(samples), null))
    return Trace(tuple(out), "solver", str(data.get("model", "")), {})

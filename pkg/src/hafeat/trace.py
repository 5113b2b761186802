"""Timed traces: data model, NULL-tuple cleanup, JSON/CSV, replay evaluation.

Canonical JSON layout::

    {"model": "buck", "source": "simulation", "meta": {...},
     "steps": [{"index": 0, "mode": "closed", "t0": 0.0, "t1": 5.1e-06,
                "null": false,
                "samples": [{"t": 0.0, "values": {"v": 0.0, ...},
                             "widths": {"v": 0.0, ...}}]}]}

``widths`` is optional and only present for solver traces whose values are
enclosure midpoints. ``meta`` is optional.
"""

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, TraceSchemaError
from .expr import TIME
from .model import Valuation, mode_matches

log = logging.getLogger(__name__)

DEFAULT_MATCH_CAP = 10_000


@dataclass(frozen=True)
class Sample:
    t: float
    values: dict
    widths: dict = None


@dataclass(frozen=True)
class TraceStep:
    index: int
    mode: str
    t0: float
    t1: float
    samples: tuple = ()
    is_null: bool = False


@dataclass(frozen=True)
class Trace:
    steps: tuple = ()
    source: str = "simulation"
    model: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def variables(self):
        seen = {}
        for s in self.steps:
            for smp in s.samples:
                for k in smp.values:
                    seen.setdefault(k, None)
        return tuple(seen)

    def valuations(self):
        for s in self.steps:
            for smp in s.samples:
                yield Valuation(s.mode, smp.values, smp.t)

    @property
    def end_time(self):
        for s in reversed(self.steps):
            if not s.is_null:
                return s.t1
        return 0.0

    def final(self):
        """Last valuation of the trace, or None when it has no samples."""
        for s in reversed(self.steps):
            if s.samples:
                smp = s.samples[-1]
                return Valuation(s.mode, smp.values, smp.t)
        return None


###############################################################################
# NULL tuples
###############################################################################

def strip_null_tuples(tr):
    """Drop NULL steps (urgent-location visits) and re-index from 0."""
    kept = [s for s in tr.steps if not s.is_null]
    steps = tuple(TraceStep(i, s.mode, s.t0, s.t1, s.samples, False)
                  for i, s in enumerate(kept))
    meta = tr.meta
    if tr.steps and not kept:
        log.warning("trace of %s contained only NULL steps", tr.model)
        meta = dict(meta, all_null=True)
    return Trace(steps, tr.source, tr.model, meta)


###############################################################################
# JSON / CSV
###############################################################################

def trace_to_dict(tr):
    steps = []
    for s in tr.steps:
        samples = []
        for smp in s.samples:
            d = {"t": smp.t, "values": dict(smp.values)}
            if smp.widths is not None:
                d["widths"] = dict(smp.widths)
            samples.append(d)
        steps.append({"index": s.index, "mode": s.mode, "t0": s.t0, "t1": s.t1,
                      "null": s.is_null, "samples": samples})
    out = {"model": tr.model, "source": tr.source, "steps": steps}
    if tr.meta:
        out["meta"] = tr.meta
    return out


def write_trace_json(tr, indent=None):
    return json.dumps(trace_to_dict(tr), indent=indent)


def _need(obj, key, path, types):
    full = "%s.%s" % (path, key) if path else key
    if not isinstance(obj, dict) or key not in obj:
        raise TraceSchemaError(full, "missing field")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, types):
        raise TraceSchemaError(full, "unexpected type %s" % type(val).__name__)
    return val


def _real_map(obj, path):
    if not isinstance(obj, dict):
        raise TraceSchemaError(path, "expected an object")
    out = {}
    for k, v in obj.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise TraceSchemaError("%s.%s" % (path, k), "expected a number")
        out[k] = float(v)
    return out


def trace_from_dict(data):
    if not isinstance(data, dict):
        raise TraceSchemaError("$", "top level must be an object")
    steps_in = _need(data, "steps", "", list)
    steps = []
    for i, s in enumerate(steps_in):
        path = "steps[%d]" % i
        if not isinstance(s, dict):
            raise TraceSchemaError(path, "expected an object")
        is_null = bool(s.get("null", False))
        mode = s.get("mode")
        if "mode" not in s:
            raise TraceSchemaError(path + ".mode", "missing field")
        if mode is not None and not isinstance(mode, str):
            raise TraceSchemaError(path + ".mode", "expected a string")
        if mode is None and not is_null:
            raise TraceSchemaError(path + ".mode", "null mode on a non-null step")
        index = _need(s, "index", path, int)
        t0 = float(_need(s, "t0", path, (int, float)))
        t1 = float(_need(s, "t1", path, (int, float)))
        samples = []
        for j, smp in enumerate(s.get("samples", [])):
            sp = "%s.samples[%d]" % (path, j)
            t = float(_need(smp, "t", sp, (int, float)))
            values = _real_map(_need(smp, "values", sp, dict), sp + ".values")
            widths = None
            if "widths" in smp:
                widths = _real_map(smp["widths"], sp + ".widths")
            samples.append(Sample(t, values, widths))
        steps.append(TraceStep(index, mode, t0, t1, tuple(samples), is_null))
    return Trace(tuple(steps), data.get("source", "simulation"), data.get("model", ""),
                 data.get("meta", {}) or {})


def read_trace_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise TraceSchemaError("$", "malformed JSON: %s" % e) from None
    return trace_from_dict(data)


def export_csv(tr):
    """One row per sample; samples sharing a time keep the latest state."""
    variables = tr.variables
    rows = []
    for s in tr.steps:
        for smp in s.samples:
            row = [smp.t, s.mode] + [smp.values.get(v, "") for v in variables]
            if rows and rows[-1][0] >= smp.t:
                rows[-1] = row
            else:
                rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "mode"] + list(variables))
    for r in rows:
        w.writerow([repr(r[0]), r[1]] + [repr(x) if isinstance(x, float) else x for x in r[2:]])
    return buf.getvalue()


###############################################################################
# Replay evaluation of features
###############################################################################

@dataclass
class MatchResult:
    values: list
    times: list          # per match, the tuple of stage match times
    truncated: bool = False


def feature_values_on_trace(tr, f, cap=DEFAULT_MATCH_CAP):
    """Feature values of every match of bound feature ``f`` along ``tr``."""
    return match_feature(tr, f, cap).values


def match_feature(tr, f, cap=DEFAULT_MATCH_CAP):
    return _Matcher(tr, f, cap).run()


class _Cond:
    """Vectorised form of a numeric Condition over the matcher's columns."""

    def __init__(self, cond, columns):
        rows, consts, rels, self.modes = [], [], [], []
        for p in cond.conjuncts:
            if p.is_mode:
                self.modes.append(p.mode)
                continue
            d = p.difference()
            row = np.zeros(len(columns))
            for v, c in d.coefficients.items():
                row[columns[v]] += c
            rows.append(row)
            consts.append(d.constant)
            rels.append(p.relation)
        self.G = np.array(rows).reshape(len(rows), len(columns))
        self.c = np.array(consts)
        self.rels = rels

    def truth(self, Z, modes):
        """Z: (k, ncols) points; modes: k location names."""
        ok = np.ones(Z.shape[0], dtype=bool)
        if self.rels:
            D = Z @ self.G.T + self.c
            for j, rel in enumerate(self.rels):
                ok &= _rel_vec(D[:, j], rel)
        for m in self.modes:
            ok &= np.array([mode_matches(m, x) for x in modes], dtype=bool)
        return ok


def _rel_vec(d, rel):
    if rel == "<=":
        return d <= 0.0
    if rel == "<":
        return d < 0.0
    if rel == ">=":
        return d >= 0.0
    if rel == ">":
        return d > 0.0
    return np.abs(d) <= 1e-9


class _Matcher:
    BISECT_ITERS = 60

    def __init__(self, tr, f, cap):
        spec = f.resolved if hasattr(f, "resolved") else f
        self.spec = spec
        self.cap = cap
        pts = []
        for s in tr.steps:
            if s.is_null:
                continue
            for smp in s.samples:
                pts.append((smp.t, s.mode, smp.values, s.index))
        variables = list(tr.variables)
        missing = sorted(spec.model_variables - set(variables))
        if missing:
            raise ModelError("trace of %r lacks feature variables %s" % (tr.model, ", ".join(missing)))
        self.cols = {v: i for i, v in enumerate(variables)}
        n = len(variables)
        self.cols[TIME] = n
        for i, l in enumerate(spec.locals):
            self.cols[l] = n + 1 + i
        self.ncols = n + 1 + len(spec.locals)
        self.nvars = n
        N = len(pts)
        self.N = N
        self.t = np.array([p[0] for p in pts], dtype=float)
        self.modes = [p[1] for p in pts]
        X = np.zeros((N, n))
        for i, p in enumerate(pts):
            for v, val in p[2].items():
                X[i, self.cols[v]] = val
        self.X = X
        step_ids = [p[3] for p in pts]
        # segment i -> i+1 is continuous when both points lie in the same step
        self.cont = np.array([step_ids[i] == step_ids[i + 1] for i in range(N - 1)], dtype=bool)
        self.stages = []
        for s in spec.stages:
            ev = s.event_condition
            self.stages.append((
                _Cond(s.guard, self.cols),
                _Cond(ev, self.cols) if ev is not None else None,
                [(name, self._expr_row(e)) for name, e in s.captures],
                s.delay_to_next,
            ))
        self.compute = self._expr_row(spec.compute)

    def _expr_row(self, e):
        row = np.zeros(self.ncols)
        for v, c in e.coefficients.items():
            row[self.cols[v]] += c
        return row, e.constant

    # -- helpers -----------------------------------------------------------
    def _full(self, X, t, caps):
        k = X.shape[0]
        Z = np.empty((k, self.ncols))
        Z[:, :self.nvars] = X
        Z[:, self.nvars] = t
        Z[:, self.nvars + 1:] = caps
        return Z

    def _point(self, pos):
        """pos = (i, lam): point on segment i at fraction lam."""
        i, lam = pos
        if lam == 0.0:
            return self.X[i], self.t[i], self.modes[i]
        x = self.X[i] + lam * (self.X[i + 1] - self.X[i])
        t = self.t[i] + lam * (self.t[i + 1] - self.t[i])
        return x, t, self.modes[i]

    def _holds(self, cond, pos, caps, window):
        x, t, m = self._point(pos)
        if window is not None and not (window[0] <= t <= window[1]):
            return False
        return bool(cond.truth(self._full(x[None, :], np.array([t]), caps), [m])[0])

    def _first_true(self, cond, i, lo, caps, window):
        """Earliest fraction in (lo, 1] of continuous segment i where cond holds."""
        a, b = lo, 1.0
        for _ in range(self.BISECT_ITERS):
            mid = 0.5 * (a + b)
            if self._holds(cond, (i, mid), caps, window):
                b = mid
            else:
                a = mid
            if (b - a) * (self.t[i + 1] - self.t[i]) < 1e-13:
                break
        return b

    def _scan(self, cond, start, caps, window, rising_only):
        """Positions after ``start`` where ``cond`` turns from false to true.

        Also yields ``start`` itself if cond holds there and not rising_only.
        """
        i0, lam0 = start
        out = []
        if not rising_only and self._holds(cond, start, caps, window):
            out.append(start)
        if i0 >= self.N - 1:
            return out
        idx = np.arange(i0 + 1, self.N)
        T = cond.truth(self._full(self.X[idx], self.t[idx], caps),
                       [self.modes[j] for j in idx])
        if window is not None:
            T &= (self.t[idx] >= window[0]) & (self.t[idx] <= window[1])
        prev_true = self._holds(cond, start, caps, window)
        prev_pos = start
        for k, j in enumerate(idx):
            cur = bool(T[k])
            seg = j - 1
            if cur and not prev_true:
                if self.cont[seg]:
                    lo = prev_pos[1] if prev_pos[0] == seg else 0.0
                    lam = self._first_true(cond, seg, lo, caps, window)
                    out.append((seg, lam) if lam < 1.0 else (j, 0.0))
                else:
                    out.append((j, 0.0))
                if len(out) > self.cap:
                    break
            if window is not None and self.t[j] > window[1]:
                break
            prev_true = cur
            prev_pos = (j, 0.0)
        return out

    # -- enumeration -------------------------------------------------------
    def run(self):
        res = MatchResult([], [])
        if self.N == 0 or not self.stages:
            return res
        caps = np.zeros(len(self.spec.locals))
        self._dfs(0, (0, 0.0), caps, None, -math.inf, (), res)
        return res

    def _dfs(self, k, start, caps, window, last_event_t, times, res):
        guard, event, captures, delay = self.stages[k]
        if event is None:
            cands = self._scan(guard, start, caps, window, rising_only=False)
        else:
            cands = []
            for pos in self._scan(event, start, caps, None, rising_only=True):
                x, t, m = self._point(pos)
                if t <= last_event_t:
                    continue
                if window is not None and t > window[1]:
                    break
                if self._holds(guard, pos, caps, window):
                    cands.append(pos)
        for pos in cands:
            if res.truncated:
                return
            x, t, m = self._point(pos)
            new_caps = caps.copy()
            z = self._full(x[None, :], np.array([t]), caps)[0]
            for name, (row, c0) in captures:
                new_caps[self.spec.locals.index(name)] = float(row @ z + c0)
            ev_t = t if event is not None else last_event_t
            if k + 1 == len(self.stages):
                z = self._full(x[None, :], np.array([t]), new_caps)[0]
                row, c0 = self.compute
                res.values.append(float(row @ z + c0))
                res.times.append(times + (float(t),))
                if len(res.values) >= self.cap:
                    res.truncated = True
                    return
            else:
                win = (t + delay.lower, t + delay.upper)
                self._dfs(k + 1, pos, new_caps, win, ev_t, times + (float(t),), res)

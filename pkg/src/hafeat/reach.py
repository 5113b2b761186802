"""Simulation and box flowpipes for affine hybrid automata.

Both analyses accept a plain :class:`HybridAutomaton` or a
:class:`ProductModel`. Continuous evolution in a location is the exact
affine-flow update ``x(t+s) = Phi(s) x(t) + w(s)``, with ``Phi``/``w`` read
off the matrix exponential of the augmented matrix ``[[A, b], [0, 0]]``.

Simulation is eager: a transition fires at the first instant its guard
holds. Crossings are searched on four sub-samples per step and then located
by bisection. The flowpipe over-approximates every such run (and every run
that leaves later, while the invariant allows it) with one box per
(location, jump count, time step).
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ModelError, ReachError
from .expr import TIME
from .model import (EQ_TOL, HybridAutomaton, mode_matches, resolve_automaton,
                    validate)
from .monitor import ProductModel, product_name
from .trace import Sample, Trace, TraceStep

log = logging.getLogger(__name__)

SUBSAMPLES = 4
BISECT_REL_TOL = 1e-6


@dataclass(frozen=True)
class SimSettings:
    step: float = 1e-3
    horizon: float = 1.0
    max_jumps: int = 100

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ModelError("step must be a positive number, got %r" % self.step)
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ModelError("horizon must be a positive number, got %r" % self.horizon)
        if self.step > self.horizon:
            raise ModelError("step %g exceeds horizon %g" % (self.step, self.horizon))
        if int(self.max_jumps) != self.max_jumps or self.max_jumps < 0:
            raise ModelError("max_jumps must be a non-negative integer")

    @property
    def n_steps(self):
        return max(1, int(math.ceil(self.horizon / self.step - 1e-9)))


@dataclass(frozen=True)
class MonitorPolicy:
    """Ways to deviate from the earliest-match monitor.

    ``skip[k]`` lets the first rising edges that could advance event stage k
    pass; ``delay[k]`` holds a level stage k back until that long after the
    monitor entered it.
    """

    skip: dict = field(default_factory=dict)
    delay: dict = field(default_factory=dict)


###############################################################################
# Compiled form
###############################################################################

class _Cond:
    """``G x + c (rel) 0`` rows plus location predicates."""

    def __init__(self, cond, index, n):
        rows, consts, rels, modes = [], [], [], []
        for p in cond.conjuncts:
            if p.is_mode:
                modes.append(p.mode)
                continue
            d = p.difference()
            g = np.zeros(n)
            for v, a in d.coefficients.items():
                g[index[v]] += a
            rows.append(g)
            consts.append(d.constant)
            rels.append(p.relation)
        self.G = np.array(rows).reshape(len(rows), n)
        self.c = np.array(consts, dtype=float)
        self.rels = tuple(rels)
        self.modes = tuple(modes)
        le = np.array([r in ("<=", "<") for r in rels], dtype=bool)
        ge = np.array([r in (">=", ">") for r in rels], dtype=bool)
        eq = np.array([r == "==" for r in rels], dtype=bool)
        self._le, self._ge, self._eq = le, ge, eq
        self.strict = np.array([r in ("<", ">") for r in rels], dtype=bool)
        # row j holds iff lb[j] <= g.x + c <= ub[j]; strict bounds use the
        # nearest float past zero so the test stays exact
        tiny = np.nextafter(0.0, 1.0)
        self._lb = np.full(len(rels), -np.inf)
        self._ub = np.full(len(rels), np.inf)
        for j, r in enumerate(rels):
            if r == "<=":
                self._ub[j] = 0.0
            elif r == "<":
                self._ub[j] = -tiny
            elif r == ">=":
                self._lb[j] = 0.0
            elif r == ">":
                self._lb[j] = tiny
            else:
                self._lb[j], self._ub[j] = -EQ_TOL, EQ_TOL
        self._GT = self.G.T.copy()
        self._mode_cache = {}

    @property
    def size(self):
        return len(self.rels)

    def modes_hold(self, mode):
        hit = self._mode_cache.get(mode)
        if hit is None:
            hit = all(mode is not None and mode_matches(m, mode) for m in self.modes)
            self._mode_cache[mode] = hit
        return hit

    def holds_many(self, X, mode):
        """Truth value at each row of ``X`` (shape k x n)."""
        if X.ndim == 1:
            X = X[None, :]
        if not self.modes_hold(mode):
            return np.zeros(len(X), dtype=bool)
        if not self.size:
            return np.ones(len(X), dtype=bool)
        D = X @ self._GT + self.c
        return ((D >= self._lb) & (D <= self._ub)).all(axis=1)

    def holds(self, x, mode):
        if not self.modes_hold(mode):
            return False
        if not self.size:
            return True
        D = self._GT.T @ x + self.c
        return bool(((D >= self._lb) & (D <= self._ub)).all())

    # -- interval side --------------------------------------------------
    def range(self, lo, hi):
        """Bounds of each row ``g x + c`` over the box."""
        if not self.size:
            return np.zeros(0), np.zeros(0)
        Gp = np.clip(self.G, 0, None)
        Gn = np.clip(self.G, None, 0)
        with np.errstate(invalid="ignore"):
            lo_c = _dot(Gp, lo) + _dot(Gn, hi) + self.c
            hi_c = _dot(Gp, hi) + _dot(Gn, lo) + self.c
        return lo_c, hi_c

    def possibly_true(self, lo, hi, mode, slack=None):
        if not self.modes_hold(mode):
            return False
        return contract(lo, hi, self, slack) is not None

    def possibly_false(self, lo, hi, mode):
        if not self.modes_hold(mode):
            return True
        rl, rh = self.range(lo, hi)
        for j in range(self.size):
            if self._le[j] and rh[j] > 0:
                return True
            if self._ge[j] and rl[j] < 0:
                return True
            if self._eq[j] and (rl[j] < -EQ_TOL or rh[j] > EQ_TOL):
                return True
        return False

    def boundary_touched(self, lo, hi):
        """Whether some row's zero set meets the box."""
        rl, rh = self.range(lo, hi)
        return bool(np.any((rl <= 0) & (rh >= 0)))


def _dot(M, v):
    # M @ v where 0 * inf counts as 0
    out = np.zeros(M.shape[0])
    for j in range(M.shape[1]):
        col = M[:, j]
        nz = col != 0
        if nz.any():
            out[nz] += col[nz] * v[j]
    return out


def contract(lo, hi, cond, slack=None, sweeps=3):
    """Shrink box [lo, hi] to the part that may satisfy ``cond``; None if empty.

    ``slack[j]`` relaxes row j by that much on each side.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if np.any(lo > hi):
        return None
    if not cond.size:
        return lo, hi
    G = cond.G
    for _ in range(sweeps):
        changed = False
        for j in range(cond.size):
            g = G[j]
            s = 0.0 if slack is None else slack[j]
            nz = np.nonzero(g)[0]
            if not len(nz):
                d = cond.c[j]
                if (cond._le[j] and d > s) or (cond._ge[j] and d < -s) or \
                        (cond._eq[j] and abs(d) > s + EQ_TOL):
                    return None
                continue
            terms_lo = np.where(g[nz] > 0, g[nz] * lo[nz], g[nz] * hi[nz])
            terms_hi = np.where(g[nz] > 0, g[nz] * hi[nz], g[nz] * lo[nz])
            tol = s + (EQ_TOL if cond._eq[j] else 0.0)
            upper = (cond._le[j] or cond._eq[j])
            lower = (cond._ge[j] or cond._eq[j])
            for pos, i in enumerate(nz):
                gi = g[i]
                if upper:
                    rest = _sum_except(terms_lo, pos)
                    if math.isfinite(rest):
                        bound = (tol - cond.c[j] - rest) / gi
                        if gi > 0 and bound < hi[i]:
                            hi[i] = bound
                            changed = True
                        elif gi < 0 and bound > lo[i]:
                            lo[i] = bound
                            changed = True
                if lower:
                    rest = _sum_except(terms_hi, pos)
                    if math.isfinite(rest):
                        bound = (-tol - cond.c[j] - rest) / gi
                        if gi > 0 and bound > lo[i]:
                            lo[i] = bound
                            changed = True
                        elif gi < 0 and bound < hi[i]:
                            hi[i] = bound
                            changed = True
                if lo[i] > hi[i]:
                    return None
                terms_lo[pos] = gi * lo[i] if gi > 0 else gi * hi[i]
                terms_hi[pos] = gi * hi[i] if gi > 0 else gi * lo[i]
        if not changed:
            break
    return lo, hi


def _sum_except(a, pos):
    total = 0.0
    for k, x in enumerate(a):
        if k != pos:
            total += x
    return total


class _Trans:
    def __init__(self, t, index, n):
        self.source = t.source
        self.target = t.target
        self.kind = t.kind
        self.stage = t.stage
        self.guard = _Cond(t.guard, index, n)
        self.event = None if t.event is None else _Cond(t.event, index, n)
        R = np.eye(n)
        r = np.zeros(n)
        for v, e in t.reset.items():
            i = index[v]
            R[i, :] = 0.0
            for u, a in e.coefficients.items():
                R[i, index[u]] += a
            r[i] = e.constant
        self.R = R
        self.r = r

    def apply(self, x):
        return self.R @ x + self.r

    def apply_box(self, lo, hi):
        c = (lo + hi) / 2
        rad = (hi - lo) / 2
        nc = self.R @ c + self.r
        nr = np.abs(self.R) @ rad
        pad = _pad(nc, nr)
        return nc - nr - pad, nc + nr + pad


def _pad(center, radius):
    return 1e-12 * (np.abs(center) + radius) + 1e-15


class _Loc:
    def __init__(self, loc, index, n, mode):
        self.name = loc.name
        self.mode = mode
        self.urgent = loc.urgent
        A = np.zeros((n, n))
        b = np.zeros(n)
        for v, e in loc.flow.items():
            i = index[v]
            for u, a in e.coefficients.items():
                A[i, index[u]] += a
            b[i] = e.constant
        self.A = A
        self.b = b
        self.absA = np.abs(A)
        self.inv = _Cond(loc.invariant, index, n)
        self.out = []
        self._phi = {}

    def phi(self, s):
        hit = self._phi.get(s)
        if hit is None:
            n = len(self.b)
            M = np.zeros((n + 1, n + 1))
            M[:n, :n] = self.A * s
            M[:n, n] = self.b * s
            E = expm(M)
            hit = (E[:n, :n], E[:n, n])
            if len(self._phi) > 64:
                self._phi.clear()
            self._phi[s] = hit
        return hit

    def substeps(self, h, m):
        key = ("sub", h, m)
        hit = self._phi.get(key)
        if hit is None:
            mats = [self.phi(h * j / m) for j in range(1, m + 1)]
            P = np.concatenate([M for M, _ in mats], axis=0)
            w = np.concatenate([v for _, v in mats])
            hit = (P, w)
            self._phi[key] = hit
        return hit

    def flow(self, x, s):
        if s == 0.0:
            return x.copy()
        P, w = self.phi(s)
        return P @ x + w

    def deriv_box(self, lo, hi):
        c = (lo + hi) / 2
        r = (hi - lo) / 2
        dc = self.A @ c + self.b
        dr = self.absA @ r
        return dc - dr, dc + dr


class CompiledModel:
    """Numeric form of a (product) automaton with all parameters resolved."""

    def __init__(self, model):
        if isinstance(model, ProductModel):
            self.product = model
            ha = model.automaton
            mode_names = model.model.location_names
            self.accept = frozenset(model.accept_locations)
            model_mode = model.model_mode
        elif isinstance(model, HybridAutomaton):
            self.product = None
            ha = model
            mode_names = None
            self.accept = frozenset()
            model_mode = lambda l: l
        else:
            raise TypeError("expected a HybridAutomaton or ProductModel")
        diags = validate(ha, mode_names)
        if diags:
            raise ModelError("ill-formed automaton %s: %s"
                             % (ha.name, "; ".join(str(d) for d in diags)))
        if TIME in set().union(*[l.flow.keys() for l in ha.locations]):
            raise ModelError("$time cannot be a model variable")
        self.source = model
        self.ha = resolve_automaton(ha)
        self.variables = tuple(self.ha.variables)
        self.index = {v: i for i, v in enumerate(self.variables)}
        n = len(self.variables)
        self.n = n
        self.locs = {}
        for loc in self.ha.locations:
            self.locs[loc.name] = _Loc(loc, self.index, n, model_mode(loc.name))
        for t in self.ha.transitions:
            self.locs[t.source].out.append(_Trans(t, self.index, n))
        self.init_loc = self.ha.initial[0]
        self.init = _Cond(self.ha.initial[1], self.index, n)
        self.time_index = self.index.get(model.time_var) if self.product else None
        self.feat_index = self.index.get(model.feat_var) if self.product else None

    def vector(self, values):
        x = np.zeros(self.n)
        for v, a in values.items():
            if v in self.index:
                x[self.index[v]] = float(a)
        return x

    def values(self, x):
        return {v: float(x[i]) for i, v in enumerate(self.variables)}

    def start_state(self, start):
        loc = start.mode
        if self.product is not None and loc not in self.locs:
            loc = product_name(loc, self.product.monitor.locations[0])
        if loc not in self.locs:
            raise ModelError("unknown start location '%s'" % start.mode)
        missing = [v for v in self.variables if v not in start.values
                   and (self.product is None or v not in self.product.monitor_variables)]
        if missing:
            raise ModelError("start valuation lacks %s" % ", ".join(missing))
        x = self.vector(start.values)
        if self.time_index is not None:
            x[self.time_index] = float(start.time)
        return loc, x

    def initial_box(self):
        n = self.n
        box = contract(np.full(n, -np.inf), np.full(n, np.inf), self.init)
        if box is None:
            raise ReachError("initial condition of %s is empty" % self.ha.name)
        lo, hi = box
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            free = [v for i, v in enumerate(self.variables)
                    if not (math.isfinite(lo[i]) and math.isfinite(hi[i]))]
            raise ReachError("initial condition leaves %s unbounded" % ", ".join(free))
        return lo, hi


_COMPILED = {}


def compile_model(model):
    key = id(model)
    hit = _COMPILED.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    cm = CompiledModel(model)
    if len(_COMPILED) > 32:
        _COMPILED.clear()
    _COMPILED[key] = (model, cm)
    return cm


###############################################################################
# Simulation
###############################################################################

def simulate(model, start, settings, policy=None, stop_at_accept=False, strict=False):
    """One eager run from ``start``; returns a :class:`Trace`.

    The run ends at the horizon, after ``max_jumps`` jumps, when the
    invariant is about to be violated with nothing enabled, when an urgent
    location has nothing enabled, or (with ``stop_at_accept``) on entering an
    accepting location. ``trace.meta['end']`` records which. With ``strict``
    a deadlock or an exhausted jump budget raises :class:`ReachError`.
    """
    cm = compile_model(model)
    tr = _Sim(cm, start, settings, policy or MonitorPolicy(), stop_at_accept).run()
    if strict and tr.meta["end"] == "deadlock":
        last = tr.final()
        raise ReachError("deadlock in location %s at t=%.9g: invariant violated with "
                         "no enabled transition" % (last.mode, last.time))
    if strict and tr.meta["end"] == "max_jumps":
        raise ReachError("more than %d jumps before t=%.9g (Zeno behaviour?)"
                         % (settings.max_jumps, tr.end_time))
    return tr


class _Sim:
    def __init__(self, cm, start, settings, policy, stop_at_accept):
        self.cm = cm
        self.s = settings
        self.policy = policy
        self.stop_at_accept = stop_at_accept
        self.loc, self.x = cm.start_state(start)
        if not cm.init.holds(self.x, cm.locs[self.loc].mode) and \
                not _near(cm.init, self.x, cm.locs[self.loc].mode):
            raise ModelError("start valuation violates the initial condition")
        self.t = float(start.time)
        self.tol = settings.step * BISECT_REL_TOL
        self.jumps = 0
        self.skips = {int(k): int(v) for k, v in policy.skip.items()}
        self.entered = {0: self.t}
        self.steps = []
        self.cur = (self.loc, self.t, [Sample(self.t, cm.values(self.x))])
        self.left = None

    # -- trace bookkeeping ---------------------------------------------
    def _sample(self):
        self.cur[2].append(Sample(self.t, self.cm.values(self.x)))

    def _close(self):
        loc, t0, samples = self.cur
        self.steps.append(TraceStep(len(self.steps), loc, t0, self.t, tuple(samples)))

    def _level_ready(self, tr, t):
        if tr.kind != "advance" or tr.event is not None:
            return True
        d = self.policy.delay.get(tr.stage)
        if not d:
            return True
        return t >= self.entered.get(tr.stage, 0.0) + d - self.tol

    # -- discrete part -------------------------------------------------
    def _instant(self):
        """Fire enabled transitions at the current instant; end reason or None."""
        event_used = False
        skipped = set()
        while True:
            L = self.cm.locs[self.loc]
            fired = None
            for tr in L.out:
                if not self._level_ready(tr, self.t):
                    continue
                if tr.event is not None:
                    if self.left is None or event_used or id(tr) in skipped:
                        continue
                    lmode, lx = self.left
                    if not tr.event.holds(self.x, L.mode) or tr.event.holds(lx, lmode):
                        continue
                if not tr.guard.holds(self.x, L.mode):
                    continue
                if tr.event is not None and self.skips.get(tr.stage, 0) > 0:
                    self.skips[tr.stage] -= 1
                    skipped.add(id(tr))
                    continue
                fired = tr
                break
            if fired is None:
                return "deadlock" if L.urgent else None
            if self.jumps >= self.s.max_jumps:
                return "max_jumps"
            self._close()
            self.x = fired.apply(self.x)
            self.loc = fired.target
            self.jumps += 1
            self.cur = (self.loc, self.t, [Sample(self.t, self.cm.values(self.x))])
            if fired.event is not None:
                event_used = True
            if fired.kind == "advance":
                self.entered[fired.stage + 1] = self.t
            if self.stop_at_accept and self.loc in self.cm.accept:
                return "accept"

    # -- continuous part -----------------------------------------------
    def _bisect(self, pred, a, b):
        """``pred(a)`` false, ``pred(b)`` true; shrink to the crossing."""
        tol = self.tol / 4
        while b - a > tol:
            m = (a + b) / 2
            if pred(m):
                b = m
            else:
                a = m
        return a, b

    def run(self):
        cm = self.cm
        H = self.s.horizon
        reason = self._instant()
        while reason is None and self.t < H - self.tol / 2:
            L = cm.locs[self.loc]
            if L.urgent:
                reason = "deadlock"
                break
            hh = min(self.s.step, H - self.t)
            ss = np.array([hh * j / SUBSAMPLES for j in range(SUBSAMPLES + 1)])
            P, w = L.substeps(hh, SUBSAMPLES)
            X = np.vstack([self.x, (P @ self.x + w).reshape(SUBSAMPLES, -1)])
            times = self.t + ss
            x0, t0 = self.x, self.t
            best = None
            for tr in L.out:
                cond = tr.event if tr.event is not None else tr.guard
                tv = cond.holds_many(X, L.mode)
                if tr.event is None and tr.kind == "advance":
                    tv &= np.array([self._level_ready(tr, tt) for tt in times])
                hit = np.nonzero(tv[1:] & ~tv[:-1])[0]
                if not len(hit):
                    continue
                j = hit[0]

                def pred(s, cond=cond, tr=tr):
                    if not cond.holds(L.flow(x0, s), L.mode):
                        return False
                    return self._level_ready(tr, t0 + s)

                a, b = self._bisect(pred, ss[j], ss[j + 1])
                if best is None or b < best[0]:
                    best = (b, a)
            iv = L.inv.holds_many(X, L.mode)
            bad = np.nonzero(~iv)[0]
            if len(bad) and bad[0] > 0:
                j = bad[0]
                a, b = self._bisect(lambda s: not L.inv.holds(L.flow(x0, s), L.mode),
                                    ss[j - 1], ss[j])
                if best is None or a < best[0] - self.tol:
                    self.x = L.flow(x0, a)
                    self.t = float(t0 + a)
                    self._sample()
                    reason = "deadlock"
                    break
            elif len(bad) and bad[0] == 0 and not _near(L.inv, x0, L.mode):
                reason = "deadlock"
                break
            if best is None:
                self.x = X[-1]
                self.t = H if hh < self.s.step or abs(t0 + hh - H) <= self.tol else t0 + hh
                self.left = (L.mode, self.x)
            else:
                b, a = best
                self.left = (L.mode, L.flow(x0, a))
                self.x = L.flow(x0, b)
                self.t = t0 + b
            self.t = float(self.t)
            self._sample()
            if best is not None:
                reason = self._instant()
        if reason is None:
            reason = "horizon"
        self._close()
        meta = {"end": reason, "jumps": self.jumps, "step": self.s.step,
                "horizon": self.s.horizon}
        return Trace(tuple(self.steps), "simulation", cm.ha.name, meta)


def _near(cond, x, mode, tol=1e-7):
    """Condition holds up to a relative slack (start states, rounding)."""
    if not cond.modes_hold(mode):
        return False
    slack = tol * (1.0 + np.abs(cond.G) @ np.abs(x)) if cond.size else None
    return contract(x, x, cond, slack) is not None


###############################################################################
# Flowpipe
###############################################################################

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("box with lower > upper")

    def contains(self, x, tol=0.0):
        return all(a - tol <= v <= b + tol for a, v, b in zip(self.lo, x, self.hi))

    def interval(self, i):
        return self.lo[i], self.hi[i]


@dataclass
class ReachSets:
    """Per (location, step index) boxes of an over-approximating flowpipe."""

    variables: tuple
    step: float
    horizon: float
    segments: dict = field(default_factory=dict)      # loc -> {k: (lo, hi)}
    jumps: list = field(default_factory=list)         # (k, source, target)
    accept_entries: list = field(default_factory=list)  # (loc, k, lo, hi)
    meta: dict = field(default_factory=dict)

    @property
    def locations(self):
        return tuple(self.segments)

    def box(self, loc, k):
        lo, hi = self.segments[loc][k]
        return Box(tuple(float(a) for a in lo), tuple(float(b) for b in hi))

    def steps_of(self, loc):
        return sorted(self.segments.get(loc, {}))

    def candidate_steps(self, t):
        h = self.step
        k = int(math.floor(t / h))
        pad = 1e-9 * h + 1e-12 * abs(t)
        out = [k]
        if t - k * h <= pad:
            out.append(k - 1)
        if (k + 1) * h - t <= pad:
            out.append(k + 1)
        return [j for j in out if j >= 0]

    def contains(self, loc, t, values, tol=1e-9):
        """Whether the state ``values`` (dict or vector) at time t lies in a box."""
        if isinstance(values, dict):
            x = np.array([values[v] for v in self.variables], dtype=float)
        else:
            x = np.asarray(values, dtype=float)
        segs = self.segments.get(loc)
        if not segs:
            return False
        slack = tol * (1.0 + np.abs(x))
        for k in self.candidate_steps(t):
            hit = segs.get(k)
            if hit is not None and np.all(hit[0] - slack <= x) and np.all(x <= hit[1] + slack):
                return True
        return False

    def hull(self, var, locations=None):
        i = self.variables.index(var)
        lo, hi = math.inf, -math.inf
        for loc, segs in self.segments.items():
            if locations is not None and loc not in locations:
                continue
            for a, b in segs.values():
                lo = min(lo, a[i])
                hi = max(hi, b[i])
        return lo, hi


def _hull_into(store, key, lo, hi, extra=None):
    old = store.get(key)
    if old is None:
        store[key] = [lo.copy(), hi.copy(), dict(extra or {})]
        return
    np.minimum(old[0], lo, out=old[0])
    np.maximum(old[1], hi, out=old[1])
    for m, (a, b) in (extra or {}).items():
        if m in old[2]:
            old[2][m] = (np.minimum(old[2][m][0], a), np.maximum(old[2][m][1], b))
        else:
            old[2][m] = (a, b)


class _Flowpipe:
    def __init__(self, cm, settings, stop_at_accept):
        self.cm = cm
        self.s = settings
        self.stop_at_accept = stop_at_accept
        self.h = settings.step
        self.tau = 2 * settings.step * BISECT_REL_TOL
        self.rs = ReachSets(cm.variables, settings.step, settings.horizon)
        self.ti = cm.time_index
        self.work = 0

    # -- box primitives ------------------------------------------------
    def _slack(self, cond, lo, hi, L):
        if not cond.size:
            return None
        dlo, dhi = L.deriv_box(lo, hi)
        speed = np.maximum(np.abs(dlo), np.abs(dhi))
        mag = np.maximum(np.abs(lo), np.abs(hi))
        absG = np.abs(cond.G)
        with np.errstate(invalid="ignore"):
            s = self.tau * _dot(absG, speed) + 1e-9 * (_dot(absG, mag) + np.abs(cond.c)) + 1e-12
        return np.where(np.isfinite(s), s, np.inf)

    def _picard(self, L, lo, hi, h):
        dlo, dhi = L.deriv_box(lo, hi)
        ylo = lo + np.minimum(0.0, h * dlo)
        yhi = hi + np.maximum(0.0, h * dhi)
        for _ in range(40):
            eps = 0.05 * (yhi - ylo) + 1e-9 * (np.abs(ylo) + np.abs(yhi)) + 1e-12
            wlo, whi = ylo - eps, yhi + eps
            dlo, dhi = L.deriv_box(wlo, whi)
            zlo = lo + np.minimum(0.0, h * dlo)
            zhi = hi + np.maximum(0.0, h * dhi)
            if np.all(zlo >= wlo) and np.all(zhi <= whi):
                return zlo, zhi
            ylo, yhi = zlo, zhi
        raise ReachError("no a-priori enclosure in location %s with step %g; "
                         "reduce the step" % (L.name, h))

    def _image(self, L, lo, hi, h):
        P, w = L.phi(h)
        c = (lo + hi) / 2
        r = (hi - lo) / 2
        nc = P @ c + w
        nr = np.abs(P) @ r
        pad = _pad(nc, nr)
        return nc - nr - pad, nc + nr + pad

    def _clip_time(self, lo, hi, t_lo, t_hi):
        if self.ti is None:
            return lo, hi
        pad = 1e-9 * self.h + 1e-12 * abs(t_hi)
        lo[self.ti] = max(lo[self.ti], t_lo - pad)
        hi[self.ti] = min(hi[self.ti], t_hi + pad)
        if lo[self.ti] > hi[self.ti]:
            return None
        return lo, hi

    def _segment(self, L, lo, hi, h, t_lo, t_hi, with_image):
        """Box over [0, h] of flow from [lo, hi]; optionally the box at h."""
        zlo, zhi = self._picard(L, lo, hi, h)
        if with_image:
            nlo, nhi = self._image(L, lo, hi, h)
            dlo, dhi = L.deriv_box(zlo, zhi)
            c = (dlo + dhi) / 2
            r = (dhi - dlo) / 2
            ac = L.A @ c
            ar = L.absA @ r
            bloat = h * h / 8 * np.maximum(np.abs(ac - ar), np.abs(ac + ar))
            ylo = np.maximum(np.minimum(lo, nlo) - bloat, zlo)
            yhi = np.minimum(np.maximum(hi, nhi) + bloat, zhi)
        else:
            ylo, yhi = zlo, zhi
            nlo, nhi = zlo.copy(), zhi.copy()
        seg = self._clip_time(ylo, yhi, t_lo, t_hi)
        if seg is None:
            return None, None
        seg = contract(seg[0], seg[1], L.inv, self._slack(L.inv, seg[0], seg[1], L))
        if seg is None:
            return None, None
        nxt = (np.maximum(nlo, seg[0]), np.minimum(nhi, seg[1]))
        nxt = self._clip_time(nxt[0], nxt[1], t_hi, t_hi)
        if nxt is not None:
            nxt = contract(nxt[0], nxt[1], L.inv, self._slack(L.inv, nxt[0], nxt[1], L))
        return seg, nxt

    # -- bookkeeping -----------------------------------------------------
    def _record(self, loc, k, lo, hi):
        segs = self.rs.segments.setdefault(loc, {})
        old = segs.get(k)
        if old is None:
            segs[k] = (lo.copy(), hi.copy())
        else:
            segs[k] = (np.minimum(old[0], lo), np.maximum(old[1], hi))

    def _jump(self, k, L, tr, B, j, pending, lefts):
        J = tr.apply_box(*B)
        self.rs.jumps.append((k, L.name, tr.target))
        _hull_into(pending, (tr.target, j + 1), J[0], J[1], lefts)

    def _flow_jumps(self, k, L, seg, j, pending):
        if j >= self.s.max_jumps:
            return
        lo, hi = seg
        for tr in L.out:
            if tr.event is None:
                if not tr.guard.modes_hold(L.mode):
                    continue
                B = contract(lo, hi, tr.guard)
            else:
                ev = tr.event
                if not ev.size or not ev.modes_hold(L.mode) or not tr.guard.modes_hold(L.mode):
                    continue
                B = contract(lo, hi, ev)
                if B is None or not ev.boundary_touched(lo, hi):
                    continue
                B = contract(B[0], B[1], tr.guard)
            if B is not None:
                self._jump(k, L, tr, B, j, pending, {L.mode: B})

    def _instant_jumps(self, k, L, box, j, pending, lefts):
        if j >= self.s.max_jumps:
            return
        lo, hi = box
        for tr in L.out:
            if not tr.guard.modes_hold(L.mode):
                continue
            if tr.event is None:
                B = contract(lo, hi, tr.guard)
            else:
                ev = tr.event
                if not ev.modes_hold(L.mode):
                    continue
                if not any(ev.possibly_false(a, b, m) for m, (a, b) in lefts.items()):
                    continue
                B = contract(lo, hi, ev)
                if B is not None:
                    B = contract(B[0], B[1], tr.guard)
            if B is not None:
                self._jump(k, L, tr, B, j, pending, lefts)

    def _discrete(self, pending, k, t_lo, t_hi, grid_out, next_out):
        """Process boxes entered by jumps during step k (or at time 0)."""
        cm = self.cm
        while pending:
            jmin = min(key[1] for key in pending)
            batch = [(key, pending.pop(key)) for key in sorted(
                [key for key in pending if key[1] == jmin])]
            for (loc, j), (lo, hi, lefts) in batch:
                self.work += 1
                L = cm.locs[loc]
                clipped = self._clip_time(lo, hi, t_lo, t_hi)
                if clipped is None:
                    continue
                lo, hi = clipped
                self._record(loc, k, lo, hi)
                if loc in cm.accept:
                    self.rs.accept_entries.append((loc, k, lo.copy(), hi.copy()))
                    if self.stop_at_accept:
                        continue
                self._instant_jumps(k, L, (lo, hi), j, pending, lefts)
                if L.urgent:
                    continue
                inside = contract(lo, hi, L.inv, self._slack(L.inv, lo, hi, L))
                if inside is None:
                    continue
                if grid_out is not None:
                    _hull_into(grid_out, (loc, j), inside[0], inside[1])
                    continue
                seg, nxt = self._segment(L, inside[0], inside[1], t_hi - t_lo,
                                         t_lo, t_hi, with_image=False)
                if seg is None:
                    continue
                self._record(loc, k, *seg)
                if nxt is not None:
                    _hull_into(next_out, (loc, j), nxt[0], nxt[1])
                self._flow_jumps(k, L, seg, j, pending)

    def run(self):
        cm = self.cm
        lo0, hi0 = cm.initial_box()
        cur = {}
        self._discrete({(cm.init_loc, 0): [lo0, hi0, {}]}, 0, 0.0, 0.0, cur, None)
        N = self.s.n_steps
        H = self.s.horizon
        for k in range(N):
            if not cur:
                break
            t_lo = k * self.h
            t_hi = min((k + 1) * self.h, H)
            hk = t_hi - t_lo
            nxt = {}
            pending = {}
            for (loc, j), (lo, hi, _) in sorted(cur.items()):
                self.work += 1
                L = cm.locs[loc]
                if L.urgent:
                    continue
                seg, img = self._segment(L, lo, hi, hk, t_lo, t_hi, with_image=True)
                if seg is None:
                    continue
                self._record(loc, k, *seg)
                if img is not None:
                    _hull_into(nxt, (loc, j), img[0], img[1])
                self._flow_jumps(k, L, seg, j, pending)
            self._discrete(pending, k, t_lo, t_hi, None, nxt)
            cur = nxt
        self.rs.meta.update({"work": self.work, "steps": N, "max_jumps": self.s.max_jumps,
                             "stop_at_accept": self.stop_at_accept})
        return self.rs


def flowpipe(model, settings, stop_at_accept=False):
    """Box over-approximation of all runs up to the horizon and ``max_jumps``.

    With ``stop_at_accept`` accepting locations are absorbing (enough for
    feature ranges and cheaper).
    """
    cm = compile_model(model)
    return _Flowpipe(cm, settings, stop_at_accept).run()


@dataclass(frozen=True)
class FeatureRange:
    lo: float
    hi: float
    empty: bool = False

    def __post_init__(self):
        if not self.empty and not self.lo <= self.hi:
            raise ValueError("feature range with lo > hi")

    @property
    def width(self):
        return 0.0 if self.empty else self.hi - self.lo

    def contains(self, value, tol=0.0):
        return not self.empty and self.lo - tol <= value <= self.hi + tol

    def __str__(self):
        if self.empty:
            return "empty"
        return "[%.9g, %.9g]" % (self.lo, self.hi)


def feature_range_of(rs, feat_var):
    if not rs.accept_entries:
        return FeatureRange(math.nan, math.nan, True)
    i = rs.variables.index(feat_var)
    lo = min(e[2][i] for e in rs.accept_entries)
    hi = max(e[3][i] for e in rs.accept_entries)
    return FeatureRange(float(lo), float(hi))


def initial_feature_range(pm, settings, reach_sets=None):
    """Hull of ``feat`` over every box entering an accepting location."""
    if not isinstance(pm, ProductModel):
        raise TypeError("initial_feature_range needs a ProductModel")
    rs = reach_sets if reach_sets is not None else flowpipe(pm, settings, stop_at_accept=True)
    return feature_range_of(rs, pm.feat_var)


def reach_sets_csv(rs):
    """One row per (location, step, variable) interval."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["location", "step", "t_lo", "t_hi", "variable", "lo", "hi"])
    for loc in sorted(rs.segments):
        for k in sorted(rs.segments[loc]):
            lo, hi = rs.segments[loc][k]
            t_lo = k * rs.step
            t_hi = min((k + 1) * rs.step, rs.horizon)
            for i, v in enumerate(rs.variables):
                w.writerow([loc, k, repr(t_lo), repr(t_hi), v, repr(float(lo[i])),
                            repr(float(hi[i]))])
    return out.getvalue()

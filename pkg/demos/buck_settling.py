"""Settling time of a buck converter.

The converter alternates between a closed and an open switch position with
period T = 1e-5 and duty cycle D = 0.51667. settlingTime records the first
time the output voltage, having overshot Vr + E, is below that level at the
moment the switch opens, and stays below at the next opening.

    python3 demos/buck_settling.py
"""

import os

from hafeat.feature import bind_feature_params, load_feature
from hafeat.haslac import load_haslac
from hafeat.model import Valuation
from hafeat.monitor import build_product
from hafeat.reach import SimSettings, simulate
from hafeat.refine import RefineSettings, emit_drh
from hafeat.trace import feature_values_on_trace

MODELS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "models")


def main():
    ha = load_haslac(os.path.join(MODELS, "buck.ha"))
    start = Valuation("closed", {"v": 0.0, "i": 0.0, "t": 0.0})
    sim = SimSettings(step=1e-7, horizon=5e-4, max_jumps=100_000)

    tr = simulate(ha, start, sim)
    print("simulated %d switch phases up to t = %g s" % (len(tr.steps), tr.end_time))
    first = tr.steps[1]
    print("first switch: %s -> %s at t = %.6e, timer reset to %g"
          % (tr.steps[0].mode, first.mode, first.t0, first.samples[0].values["t"]))
    peak = max(s.values["v"] for st in tr.steps for s in st.samples)
    print("peak output voltage %.3f V" % peak)

    feature = bind_feature_params(load_feature(os.path.join(MODELS, "settling.fia")),
                                  {"Vr": 12, "E": 0.5})
    values = feature_values_on_trace(tr, feature)
    print("settlingTime on this run: %.6e s (%d matches)" % (values[0], len(values)))

    # the same value, recorded by the monitor inside the product automaton
    pm = build_product(ha, feature)
    ptr = simulate(pm, start, sim, stop_at_accept=True)
    print("product run ends by %s with feat = %.6e"
          % (ptr.meta["end"], ptr.final().values[pm.feat_var]))

    # a bounded reachability query for an SMT solver, first lines only
    rs = RefineSettings(K=8, eps=1e-6, time_horizon=5e-5, step=1e-7)
    text = emit_drh(pm, 4e-4, 5e-4, rs)
    print()
    print("\n".join(text.splitlines()[:12]))
    print("... (%d lines)" % len(text.splitlines()))


if __name__ == "__main__":
    main()

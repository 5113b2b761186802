"""Walk through range evaluation and refinement on the ramp model.

x grows at unit rate from anywhere in [0, 0.5], and the feature records the
time x first reaches 2, so the true range is [1.5, 2.0]. The flowpipe gives
a slightly bloated initial range; bisection with the builtin oracle then
shrinks each corner to within eps and keeps a witness run for it.

    python3 demos/ramp_refinement.py
"""

import os

from hafeat.feature import bind_feature_params, load_feature
from hafeat.haslac import load_haslac
from hafeat.monitor import build_product
from hafeat.reach import SimSettings, initial_feature_range
from hafeat.refine import RefineSettings, make_oracle, refine_range
from hafeat.trace import export_csv, feature_values_on_trace

MODELS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "models")


def main():
    ha = load_haslac(os.path.join(MODELS, "ramp_set.ha"))
    feature = bind_feature_params(load_feature(os.path.join(MODELS, "cross_time.fia")),
                                  {"th": 2})
    pm = build_product(ha, feature)
    print("product automaton: %d locations, %d transitions"
          % (len(pm.automaton.locations), len(pm.automaton.transitions)))

    sim = SimSettings(step=1e-3, horizon=3.0, max_jumps=2)
    rng = initial_feature_range(pm, sim)
    print("initial range from the flowpipe:", rng)

    rs = RefineSettings(K=2, eps=0.01, time_horizon=3.0, step=1e-3, sample_budget=200)
    oracle = make_oracle(pm, rs)
    rr = refine_range(pm, rng, rs, oracle)
    print("refined range: [%.4f, %.4f] (status %s)" % (rr.lo_star, rr.hi_star, rr.status))
    print("oracle calls: low %d, high %d" % (rr.lo_calls, rr.hi_calls))

    # each witness is a concrete run; replaying it recovers its corner value
    for side, tr in (("low", rr.lo_witness), ("high", rr.hi_witness)):
        proj = pm.project(tr)
        x0 = round(proj.steps[0].samples[0].values["x"], 4) + 0.0
        print("%s witness starts at x = %.4f, replayed value %s"
              % (side, x0, [round(v, 4) for v in feature_values_on_trace(proj, feature)]))
    print()
    print("first rows of the low witness as CSV:")
    print("\n".join(export_csv(pm.project(rr.lo_witness)).splitlines()[:4]))


if __name__ == "__main__":
    main()

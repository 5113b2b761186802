"""Import a SpaceEx network of two tanks and simulate it.

The network binds one tank template twice with different inflow and
period constants. Flattening builds the product of the two location sets,
turns the bound constants into parameters and takes the initial state from
the configuration file.

    python3 demos/sx_import.py
"""

import os

from hafeat.haslac import print_haslac
from hafeat.model import Valuation
from hafeat.reach import SimSettings, compile_model, simulate
from hafeat.sx import import_sx, load_sx

MODELS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "models")


def main():
    xml = os.path.join(MODELS, "sx_tanks.xml")
    doc = load_sx(xml)
    for comp in doc.components.values():
        kind = "network of %d binds" % len(comp.binds) if comp.is_network else \
            "%d locations" % len(comp.locations)
        print("component %s: %s" % (comp.id, kind))

    ha, cfg = import_sx(xml, os.path.join(MODELS, "sx_tanks.cfg"))
    print("flattened: %d locations, parameters %s" % (len(ha.locations), ha.parameters))
    print()
    print("\n".join(print_haslac(ha).splitlines()[:14]))
    print("...")

    lo, hi = compile_model(ha).initial_box()
    start = Valuation(ha.initial[0], dict(zip(ha.variables, map(float, lo))))
    tr = simulate(ha, start, SimSettings(0.01, cfg.time_horizon, 100))
    print()
    print("mode sequence over %g s:" % cfg.time_horizon)
    for st in tr.steps:
        print("  %6.3f  %s" % (st.t0, st.mode))


if __name__ == "__main__":
    main()

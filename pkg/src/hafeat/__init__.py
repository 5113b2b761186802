"""Feature ranges of affine hybrid automata.

Typical use::

    from hafeat import load_haslac, load_feature, bind_feature_params
    from hafeat import build_product, initial_feature_range, SimSettings

    ha = load_haslac("buck.ha")
    f = bind_feature_params(load_feature("settling.fia"), {"Vr": 12, "E": 0.5})
    pm = build_product(ha, f)
    print(initial_feature_range(pm, SimSettings(step=1e-7, horizon=1e-3)))
"""

__version__ = "0.1.0"

from .errors import (BindError, ConfigError, HafeatError, ModelError, NonAffineError,
                     ParseError, ReachError, RefinementError, SolverError, TraceSchemaError)
from .expr import LinExpr
from .model import (Condition, HybridAutomaton, Location, Porv, Transition, Valuation,
                    eval_condition, eval_lin, validate)
from .haslac import load_haslac, parse_haslac, print_haslac
from .feature import bind_feature_params, load_feature, parse_feature, print_feature
from .trace import (Trace, export_csv, feature_values_on_trace, match_feature,
                    read_trace_json, strip_null_tuples, write_trace_json)
from .monitor import ProductModel, build_product, compile_monitor, product
from .reach import (FeatureRange, MonitorPolicy, ReachSets, SimSettings, flowpipe,
                    initial_feature_range, simulate)
from .refine import (Feasibility, RefineSettings, RefinedRange, emit_drh, feasible,
                     parse_solver_trace, refine_corner, refine_range)
from .sx import flatten, import_sx, parse_sx, parse_sx_config
from .config import ToolConfig, load_config

"""Command-line entry point: ``hafeat evaluate | refine | import | trace``.

Exit codes: 0 success, 1 input error, 2 analysis failure, 3 external tool
failure. Reports are plain text followed by a JSON block.
"""

import argparse
import datetime
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass

from . import __version__
from .config import ENV_VAR, resolve_config
from .errors import ConfigError, HafeatError
from .feature import bind_feature_params, load_feature
from .haslac import load_haslac, print_haslac
from .monitor import build_product
from .reach import SimSettings, initial_feature_range
from .refine import RefineSettings, make_oracle, refine_range, suggest_K
from .sx import import_sx
from .trace import (export_csv, read_trace_json, strip_null_tuples, write_trace_json)

log = logging.getLogger("hafeat")

JSON_MARK = "--- json ---"
TIMING_FIELDS = ("elapsed_s", "run_dir")
AUTO_K_PROBE = 10_000


@dataclass
class Report:
    text: str
    data: dict
    run_dir: str = None

    def render(self):
        return "%s\n%s\n%s\n" % (self.text.rstrip("\n"), JSON_MARK,
                                 json.dumps(self.data, indent=2, sort_keys=True))


def parse_report(output):
    """The JSON block of a rendered report."""
    _, _, block = output.partition(JSON_MARK)
    return json.loads(block)


def _run_dir(cfg, command):
    try:
        os.makedirs(cfg.workspace_dir, exist_ok=True)
    except OSError as e:
        raise ConfigError("cannot create workspace '%s': %s" % (cfg.workspace_dir, e))
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    return tempfile.mkdtemp(prefix="%s-%s-" % (command, stamp), dir=cfg.workspace_dir)


def _find(path, cfg):
    if os.path.exists(path) or cfg.model_dir is None:
        return path
    alt = os.path.join(cfg.model_dir, path)
    return alt if os.path.exists(alt) else path


def _read_inputs(model, feature, bindings, cfg):
    try:
        ha = load_haslac(_find(model, cfg))
        spec = load_feature(_find(feature, cfg))
    except OSError as e:
        raise ConfigError("cannot read %s: %s" % (e.filename, e.strerror))
    bf = bind_feature_params(spec, bindings)
    return ha, bf, build_product(ha, bf)


def _settings(pm, cfg):
    jumps = cfg.jumps
    if jumps is None:
        probe = SimSettings(cfg.step, cfg.horizon, AUTO_K_PROBE)
        jumps = suggest_K(pm, probe)
    return SimSettings(cfg.step, cfg.horizon, jumps)


def _fmt_bindings(b):
    return ", ".join("%s=%s" % (k, json.dumps(v)) for k, v in b.items())


def _write(run_dir, name, text):
    path = os.path.join(run_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def cmd_evaluate(model, feature, bindings, cfg):
    """Initial feature range of ``feature`` over ``model``."""
    t0 = time.perf_counter()
    ha, bf, pm = _read_inputs(model, feature, bindings, cfg)
    s = _settings(pm, cfg)
    run_dir = _run_dir(cfg, "evaluate")
    rng = initial_feature_range(pm, s)
    elapsed = time.perf_counter() - t0
    data = {
        "command": "evaluate", "model": ha.name, "feature": bf.name,
        "bindings": dict(bf.bindings),
        "settings": {"step": s.step, "horizon": s.horizon, "jumps": s.max_jumps},
        "range": None if rng.empty else [rng.lo, rng.hi],
        "empty": rng.empty, "elapsed_s": round(elapsed, 3), "run_dir": run_dir,
    }
    lines = [
        "feature %s(%s) on model %s" % (bf.name, _fmt_bindings(bf.bindings), ha.name),
        "settings: step=%g horizon=%g jumps=%d" % (s.step, s.horizon, s.max_jumps),
        "range: %s" % ("empty range (no run matches)" if rng.empty else rng),
        "time: %.3f s" % elapsed,
    ]
    rep = Report("\n".join(lines), data, run_dir)
    _write(run_dir, "report.txt", rep.render())
    return rep


def cmd_refine(model, feature, bindings, cfg):
    """Initial range, then both corners refined with the configured oracle."""
    t0 = time.perf_counter()
    ha, bf, pm = _read_inputs(model, feature, bindings, cfg)
    s = _settings(pm, cfg)
    run_dir = _run_dir(cfg, "refine")
    rng = initial_feature_range(pm, s)
    data = {
        "command": "refine", "model": ha.name, "feature": bf.name,
        "bindings": dict(bf.bindings),
        "settings": {"step": s.step, "horizon": s.horizon, "jumps": s.max_jumps,
                     "eps": cfg.eps, "oracle": cfg.oracle,
                     "sample_budget": cfg.sample_budget},
        "range": None if rng.empty else [rng.lo, rng.hi], "empty": rng.empty,
        "run_dir": run_dir,
    }
    lines = [
        "feature %s(%s) on model %s" % (bf.name, _fmt_bindings(bf.bindings), ha.name),
        "settings: step=%g horizon=%g jumps=%d eps=%g oracle=%s"
        % (s.step, s.horizon, s.max_jumps, cfg.eps, cfg.oracle),
        "initial range: %s" % ("empty range (no run matches)" if rng.empty else rng),
    ]
    if rng.empty:
        data.update(refined=None, status="empty", calls={"low": 0, "high": 0})
    else:
        rs = RefineSettings(K=s.max_jumps, eps=cfg.eps, oracle=cfg.oracle,
                            time_horizon=s.horizon, sample_budget=cfg.sample_budget,
                            step=s.step, precision=cfg.solver_precision, seed=cfg.seed,
                            solver=cfg.external_solver_path, solver_sat=cfg.solver_sat,
                            solver_unsat=cfg.solver_unsat, solver_timeout=cfg.solver_timeout,
                            workdir=run_dir)
        rr = refine_range(pm, rng, rs, make_oracle(pm, rs))
        witnesses = {}
        for side, tr, value in (("low", rr.lo_witness, rr.lo_value),
                                ("high", rr.hi_witness, rr.hi_value)):
            if tr is None:
                witnesses[side] = None
                continue
            _write(run_dir, "witness_%s.json" % side, write_trace_json(tr, indent=1))
            _write(run_dir, "witness_%s.csv" % side, export_csv(tr))
            witnesses[side] = {"json": "witness_%s.json" % side,
                               "csv": "witness_%s.csv" % side, "value": value}
        data.update(refined=[rr.lo_star, rr.hi_star], status=rr.status,
                    calls={"low": rr.lo_calls, "high": rr.hi_calls},
                    iterations=rr.iterations, witnesses=witnesses)
        lines.append("refined range: [%.9g, %.9g]%s" % (
            rr.lo_star, rr.hi_star,
            "" if rr.status == "ok" else "  (refinement %s; unrefined corners kept)" % rr.status))
        lines.append("oracle calls: low=%d high=%d" % (rr.lo_calls, rr.hi_calls))
        for side in ("low", "high"):
            w = witnesses[side]
            lines.append("%s witness: %s" % (side, "none" if w is None else
                                             "%s (value %.9g)" % (os.path.join(run_dir, w["json"]),
                                                                  w["value"])))
    elapsed = time.perf_counter() - t0
    data["elapsed_s"] = round(elapsed, 3)
    lines.append("time: %.3f s" % elapsed)
    rep = Report("\n".join(lines), data, run_dir)
    _write(run_dir, "report.txt", rep.render())
    return rep


def cmd_import(xml_path, cfg_path=None, out=None):
    """SX model (+ optional SpaceEx config) to HASLAC text."""
    ha, sxcfg = import_sx(xml_path, cfg_path)
    text = print_haslac(ha)
    dest = out or os.path.splitext(xml_path)[0] + ".ha"
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write(text)
    data = {"command": "import", "source": xml_path, "config": cfg_path, "output": dest,
            "model": ha.name, "locations": list(ha.location_names),
            "time_horizon": sxcfg.time_horizon}
    return Report("wrote %s" % dest, data)


def _load_any_trace(path):
    from .refine import parse_solver_trace
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except ValueError:
        raw = None
    if isinstance(raw, dict) and "traces" in raw:
        return parse_solver_trace(text)
    return read_trace_json(text)


def cmd_trace_strip(path, out=None):
    tr = _load_any_trace(path)
    clean = strip_null_tuples(tr)
    dest = out or os.path.splitext(path)[0] + ".stripped.json"
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write(write_trace_json(clean, indent=1))
    removed = len(tr.steps) - len(clean.steps)
    return Report("wrote %s (%d NULL step(s) removed)" % (dest, removed),
                  {"command": "trace strip", "output": dest, "removed": removed,
                   "steps": len(clean.steps)})


def cmd_trace_csv(path, out=None):
    tr = _load_any_trace(path)
    dest = out or os.path.splitext(path)[0] + ".csv"
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write(export_csv(tr))
    return Report("wrote %s" % dest, {"command": "trace csv", "output": dest})


###############################################################################
# argparse wiring
###############################################################################

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("%s: %s" % (self.prog, message))


def _binding(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected NAME=VALUE, got '%s'" % text)
    name, val = text.split("=", 1)
    try:
        return name.strip(), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError("value of %s must be a number" % name)


def build_parser():
    p = _Parser(prog="hafeat", description="Feature ranges of hybrid automata.")
    p.add_argument("--version", action="version", version="hafeat " + __version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def analysis(name, help_):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--model", required=True, help="HASLAC model file")
        q.add_argument("--feature", required=True, help="feature file")
        q.add_argument("--bind", action="append", type=_binding, default=[],
                       metavar="NAME=VALUE", help="feature parameter (repeatable)")
        q.add_argument("--horizon", type=float)
        q.add_argument("--step", type=float)
        q.add_argument("--jumps", type=int, metavar="K")
        q.add_argument("--config", help="configuration file (default $%s)" % ENV_VAR)
        return q

    analysis("evaluate", "initial feature range")
    r = analysis("refine", "refine the range corners")
    r.add_argument("--eps", type=float)
    r.add_argument("--oracle", choices=("builtin", "external", "hybrid"))
    r.add_argument("--budget", type=int, help="builtin oracle sample budget")
    r.add_argument("--seed", type=int)

    i = sub.add_parser("import", help="SpaceEx XML (+cfg) to HASLAC")
    i.add_argument("xml")
    i.add_argument("cfg", nargs="?")
    i.add_argument("-o", "--output")

    t = sub.add_parser("trace", help="trace utilities")
    tsub = t.add_subparsers(dest="trace_command", parser_class=_Parser)
    for name, help_ in (("strip", "remove NULL steps and re-index"),
                        ("csv", "export samples as CSV")):
        q = tsub.add_parser(name, help=help_)
        q.add_argument("trace")
        q.add_argument("-o", "--output")
    return p


def _check_overrides(args):
    for name in ("horizon", "step", "eps"):
        v = getattr(args, name, None)
        if v is not None and not v > 0:
            raise ConfigError("--%s must be positive" % name)
    if getattr(args, "jumps", None) is not None and args.jumps < 0:
        raise ConfigError("--jumps must be >= 0")
    if getattr(args, "budget", None) is not None and args.budget < 0:
        raise ConfigError("--budget must be >= 0")


def run(argv=None):
    """Parse ``argv`` and run one command; returns the :class:`Report`."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("evaluate", "refine"):
        _check_overrides(args)
        cfg = resolve_config(args.config)
        cfg = cfg.with_overrides(horizon=args.horizon, step=args.step, jumps=args.jumps,
                                 eps=getattr(args, "eps", None),
                                 oracle=getattr(args, "oracle", None),
                                 sample_budget=getattr(args, "budget", None),
                                 seed=getattr(args, "seed", None))
        if cfg.step > cfg.horizon:
            raise ConfigError("step %g exceeds horizon %g" % (cfg.step, cfg.horizon))
        bindings = dict(args.bind)
        fn = cmd_evaluate if args.command == "evaluate" else cmd_refine
        return fn(args.model, args.feature, bindings, cfg)
    if args.command == "import":
        return cmd_import(args.xml, args.cfg, args.output)
    if args.command == "trace":
        if args.trace_command == "strip":
            return cmd_trace_strip(args.trace, args.output)
        if args.trace_command == "csv":
            return cmd_trace_csv(args.trace, args.output)
        raise ConfigError("hafeat trace: expected 'strip' or 'csv'")
    raise ConfigError("hafeat: expected a command (evaluate, refine, import, trace)")


def main(argv=None):
    try:
        rep = run(argv)
    except HafeatError as e:
        sys.stderr.write("hafeat: %s error: %s\n" % (e.origin, e))
        return e.exit_code
    except OSError as e:
        sys.stderr.write("hafeat: input error: %s\n" % e)
        return 1
    except Exception as e:       # analysis bug or numeric failure
        sys.stderr.write("hafeat: analysis failure: %s: %s\n" % (type(e).__name__, e))
        return 2
    sys.stdout.write(rep.render())
    return 0


if __name__ == "__main__":
    sys.exit(main())

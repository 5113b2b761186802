"""Tool configuration: ``key = value`` lines, ``#`` starts a comment.

Keys (all optional)::

    workspace       directory for run outputs        (default ./hafeat-workspace)
    models          directory searched for models/features
    solver          dReach-compatible executable     (enables external oracle)
    precision       solver precision delta           (default 0.001)
    horizon         time horizon in seconds          (default 1.0)
    step            simulation / flowpipe step       (default 0.001)
    jumps           max jumps K; "auto" = simulated jumps + 2
    eps             corner tolerance                 (default 0.01)
    oracle          builtin | external | hybrid
    sample_budget   builtin oracle simulations       (default 100)
    solver_sat      solver output token for sat      (default sat)
    solver_unsat    solver output token for unsat    (default unsat)
    solver_timeout  seconds per solver query         (default 600)
    seed            RNG seed of the builtin oracle   (default 0)

Relative paths are resolved against the configuration file's directory.
"""

import os
from dataclasses import dataclass, replace

from .errors import ConfigError

ENV_VAR = "HAFEAT_CONFIG"


@dataclass(frozen=True)
class ToolConfig:
    workspace_dir: str = "hafeat-workspace"
    model_dir: str = None
    external_solver_path: str = None
    solver_precision: float = 1e-3
    horizon: float = 1.0
    step: float = 1e-3
    jumps: int = None
    eps: float = 1e-2
    oracle: str = "builtin"
    sample_budget: int = 100
    solver_sat: str = "sat"
    solver_unsat: str = "unsat"
    solver_timeout: float = 600.0
    seed: int = 0
    path: str = None

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _positive(name, conv):
    def parse(text):
        try:
            v = conv(text)
        except ValueError:
            raise ValueError("%s must be a number, got '%s'" % (name, text))
        if not v > 0:
            raise ValueError("%s must be positive" % name)
        return v
    return parse


def _nonneg_int(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise ValueError("%s must be an integer, got '%s'" % (name, text))
        if v < 0:
            raise ValueError("%s must be >= 0" % name)
        return v
    return parse


def _jumps(text):
    if text == "auto":
        return None
    return _nonneg_int("jumps")(text)


def _oracle(text):
    if text not in ("builtin", "external", "hybrid"):
        raise ValueError("oracle must be builtin, external or hybrid")
    return text


_KEYS = {
    "workspace": ("workspace_dir", str),
    "models": ("model_dir", str),
    "solver": ("external_solver_path", str),
    "precision": ("solver_precision", _positive("precision", float)),
    "horizon": ("horizon", _positive("horizon", float)),
    "step": ("step", _positive("step", float)),
    "jumps": ("jumps", _jumps),
    "eps": ("eps", _positive("eps", float)),
    "oracle": ("oracle", _oracle),
    "sample_budget": ("sample_budget", _nonneg_int("sample_budget")),
    "solver_sat": ("solver_sat", str),
    "solver_unsat": ("solver_unsat", str),
    "solver_timeout": ("solver_timeout", _positive("solver_timeout", float)),
    "seed": ("seed", _nonneg_int("seed")),
}
_PATH_KEYS = ("workspace", "models")


def parse_config(text, base_dir=".", source="<config>"):
    fields = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: malformed line, expected key = value" % (source, n))
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError("%s:%d: unknown key '%s'" % (source, n, key))
        if not val:
            raise ConfigError("%s:%d: empty value for '%s'" % (source, n, key))
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
            val = val[1:-1]
        name, conv = _KEYS[key]
        try:
            value = conv(val)
        except ValueError as e:
            raise ConfigError("%s:%d: %s" % (source, n, e))
        if key in _PATH_KEYS:
            value = os.path.normpath(os.path.join(base_dir, os.path.expanduser(value)))
        fields[name] = value
    if "oracle" not in fields and fields.get("external_solver_path"):
        fields["oracle"] = "hybrid"
    if "workspace_dir" not in fields:
        fields["workspace_dir"] = os.path.join(base_dir, ToolConfig.workspace_dir)
    cfg = ToolConfig(path=source, **fields)
    if cfg.model_dir is not None and not os.path.isdir(cfg.model_dir):
        raise ConfigError("%s: models directory '%s' does not exist" % (source, cfg.model_dir))
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError("cannot read configuration '%s': %s" % (path, e.strerror or e))
    return parse_config(text, os.path.dirname(os.path.abspath(path)), str(path))


def resolve_config(path=None):
    """Config from ``path``, else from $HAFEAT_CONFIG, else defaults."""
    path = path or os.environ.get(ENV_VAR)
    if path:
        return load_config(path)
    return ToolConfig(workspace_dir=os.path.abspath(ToolConfig.workspace_dir))

"""Small builders shared by the unit tests."""

from hafeat.expr import TokenStream, parse_expr
from hafeat.feature import bind_feature_params, load_feature, parse_feature
from hafeat.haslac import load_haslac, parse_haslac
from hafeat.model import parse_condition
from hafeat.monitor import build_product

from conftest import data


def _classify(params):
    return lambda name, tok: "param" if name in params else "var"


def expr(text, params=()):
    ts = TokenStream(text)
    return parse_expr(ts, _classify(set(params)))


def cond(text, params=()):
    ts = TokenStream(text)
    return parse_condition(ts, _classify(set(params)))


def product(model, feature, **bindings):
    """Product of a model and feature from tests/data (or inline text)."""
    ha = parse_haslac(model) if "module" in model else load_haslac(data(model))
    spec = parse_feature(feature) if "feature" in feature else load_feature(data(feature))
    return build_product(ha, bind_feature_params(spec, bindings))


RAMP_FEATURE = """feature f();
begin
  var f0;
  @+(x >= 2), f0 = $time |-> f = f0;
end
"""

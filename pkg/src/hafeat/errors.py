"""Exception hierarchy shared by all hafeat modules."""


class HafeatError(Exception):
    """Base class. ``exit_code`` is what the command line returns for it."""

    exit_code = 1
    origin = "hafeat"


class ParseError(HafeatError):
    """Positioned syntax or semantic error in HASLAC, feature or SX text."""

    origin = "parser"

    def __init__(self, message, line=None, column=None, source="<memory>"):
        self.message = message
        self.line = line
        self.column = column
        self.source = source
        if line is not None:
            where = "%s:%d:%d: " % (source, line, column or 0)
        else:
            where = "%s: " % source
        super().__init__(where + message)


class NonAffineError(ParseError):
    pass


class ModelError(HafeatError):
    """Ill-formed automaton or unresolved name during evaluation."""

    origin = "model"


class UnresolvedName(ModelError):
    def __init__(self, name):
        self.name = name
        super().__init__("unresolved name '%s'" % name)


class BindError(HafeatError):
    origin = "feature"


class ReachError(HafeatError):
    """Analysis failure: unbounded initial set, diverging enclosure, ..."""

    exit_code = 2
    origin = "reach"


class RefinementError(HafeatError):
    exit_code = 2
    origin = "refine"


class SolverError(HafeatError):
    """The external solver is missing, timed out or produced garbage."""

    exit_code = 3
    origin = "solver"


class TraceSchemaError(HafeatError):
    origin = "trace"

    def __init__(self, path, message):
        self.path = path
        super().__init__("%s: %s" % (path, message))


class ConfigError(HafeatError):
    origin = "config"

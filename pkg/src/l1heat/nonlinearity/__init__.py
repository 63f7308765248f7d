from .core import (
    BUILTINS,
    ClosedFormEnvelopes,
    EvaluationOverflow,
    MVerdict,
    Nonlinearity,
    NonlinearityError,
    StructureFlags,
    builtin,
    check_hypothesis_m,
    check_structure,
    from_source,
    linear,
    logcorrected,
    minpower,
    parse,
    power,
    zero,
)
from .envelopes import EnvelopeError, EnvelopeFunctions, EnvelopeTable, compute_envelopes, numeric_envelopes
from .expr import ExpressionSyntaxError

__all__ = [
    "BUILTINS", "ClosedFormEnvelopes", "EnvelopeError", "EnvelopeFunctions", "EnvelopeTable",
    "EvaluationOverflow", "ExpressionSyntaxError", "MVerdict", "Nonlinearity", "NonlinearityError",
    "StructureFlags", "builtin", "check_hypothesis_m", "check_structure", "compute_envelopes",
    "from_source", "linear", "logcorrected", "minpower", "numeric_envelopes", "parse", "power", "zero",
]

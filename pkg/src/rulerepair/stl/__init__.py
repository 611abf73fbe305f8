"""Signal temporal logic: formulas, parsing and discrete-time semantics."""
from .formula import (FALSE, TRUE, And, Bottom, Eventually, Formula, Globally, Historically, Not,
                      Once, Or, Predicate, Previous, Since, Top, Until, depth, implies, is_nnf,
                      predicates, to_nnf, walk)
from .parser import ParseError, parse, seconds_to_steps
from .printer import to_string
from .semantics import (EPS, INF, ArraySignal, Monitor, SignalView, conjoin_rules, eval_bool,
                        raw_robustness, robustness, rule_tvs, time_to_violation)

__all__ = [
    "FALSE", "TRUE", "And", "Bottom", "Eventually", "Formula", "Globally", "Historically", "Not",
    "Once", "Or", "Predicate", "Previous", "Since", "Top", "Until", "depth", "implies", "is_nnf",
    "predicates", "to_nnf", "walk", "ParseError", "parse", "seconds_to_steps", "to_string", "EPS",
    "INF", "ArraySignal", "Monitor", "SignalView", "conjoin_rules", "eval_bool", "raw_robustness",
    "robustness", "rule_tvs", "time_to_violation",
]

"""Render formulas in the concrete grammar accepted by the parser."""
from __future__ import annotations

from .formula import (And, Bottom, Eventually, Formula, Globally, Historically, Not, Once, Or,
                      Predicate, Previous, Since, Top, Until)

_UNARY = {Globally: "G", Eventually: "F", Once: "O", Historically: "H"}


def _num(steps: int, dt: float | None) -> str:
    if dt is None:
        return str(steps)
    return f"{steps * dt:.10g}"


def _interval(a: int, b: int | None, dt: float | None) -> str:
    if a == 0 and b is None:
        return ""
    hi = "inf" if b is None else _num(b, dt)
    return f"[{_num(a, dt)},{hi}]"


def _group(f: Formula, dt) -> str:
    text = to_string(f, dt)
    if isinstance(f, (And, Or, Until, Since)):
        return f"({text})"
    return text


def to_string(f: Formula, dt: float | None = None) -> str:
    """Print f. With dt=None bounds are printed as step counts, which the
    parser reads back unchanged at its default dt of 1."""
    if isinstance(f, Top):
        return "true"
    if isinstance(f, Bottom):
        return "false"
    if isinstance(f, Predicate):
        return ("!" if f.negated else "") + f.id
    if isinstance(f, Not):
        return "!" + _group(f.arg, dt)
    if isinstance(f, And):
        return " & ".join(_group(c, dt) for c in f.args)
    if isinstance(f, Or):
        return " | ".join(_group(c, dt) for c in f.args)
    if isinstance(f, Previous):
        return f"P({to_string(f.arg, dt)})"
    for cls, sym in _UNARY.items():
        if type(f) is cls:
            return f"{sym}{_interval(f.a, f.b, dt)}({to_string(f.arg, dt)})"
    if isinstance(f, (Until, Since)):
        sym = "U" if isinstance(f, Until) else "S"
        return f"{_group(f.lhs, dt)} {sym}{_interval(f.a, f.b, dt)} {_group(f.rhs, dt)}"
    raise TypeError(type(f).__name__)

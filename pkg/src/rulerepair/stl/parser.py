"""Recursive-descent parser for the formula grammar.

    formula     := implication
    implication := disjunction [ "=>" implication ]
    disjunction := conjunction { "|" conjunction }
    conjunction := binary { "&" binary }
    binary      := unary [ ("U" | "S") [interval] unary ]
    unary       := "!" unary | ("G"|"F"|"O"|"H") [interval] unary | "P" unary | atom
    atom        := "true" | "false" | IDENT | "(" formula ")"
    interval    := "[" bound "," ( bound | "inf" ) "]"
    bound       := NUMBER | IDENT          (identifiers name parameters)

Interval bounds are seconds and are converted to steps by rounding t/dt to
the nearest integer, ties upward.
"""
from __future__ import annotations

import math
import re
from typing import Mapping

from .formula import (FALSE, TRUE, And, Eventually, Formula, Globally, Historically, Not, Once,
                      Or, Predicate, Previous, Since, Until)


class ParseError(ValueError):
    def __init__(self, position: int, expected: str, text: str = ""):
        self.position = position
        self.expected = expected
        super().__init__(f"at position {position}: expected {expected}" + (f" in {text!r}" if text else ""))


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?)|(?P<ident>[a-z_][a-z0-9_]*)|(?P<op>=>|[!&|()\[\],GFOHPUS]))")
_UNARY = {"G": Globally, "F": Eventually, "O": Once, "H": Historically}


def seconds_to_steps(t: float, dt: float) -> int:
    return int(math.floor(t / dt + 0.5 + 1e-9))


class _Parser:
    def __init__(self, text: str, dt: float, params: Mapping[str, float]):
        self.text = text
        self.dt = dt
        self.params = params
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise ParseError(pos + (len(text[pos:]) - len(text[pos:].lstrip())), "a token", text)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.i = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def at(self, value: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[0] == "op" and tok[1] == value

    def position(self) -> int:
        tok = self.peek()
        return tok[2] if tok else len(self.text)

    def expect(self, value: str) -> None:
        if not self.at(value):
            raise ParseError(self.position(), repr(value), self.text)
        self.i += 1

    def parse(self) -> Formula:
        if not self.tokens:
            raise ParseError(0, "a formula", self.text)
        f = self.implication()
        if self.peek() is not None:
            raise ParseError(self.position(), "end of input", self.text)
        return f

    def implication(self) -> Formula:
        lhs = self.disjunction()
        if self.at("=>"):
            self.i += 1
            rhs = self.implication()
            return Or((Not(lhs), rhs))
        return lhs

    def disjunction(self) -> Formula:
        args = [self.conjunction()]
        while self.at("|"):
            self.i += 1
            args.append(self.conjunction())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conjunction(self) -> Formula:
        args = [self.binary()]
        while self.at("&"):
            self.i += 1
            args.append(self.binary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def binary(self) -> Formula:
        lhs = self.unary()
        for sym, cls in (("U", Until), ("S", Since)):
            if self.at(sym):
                self.i += 1
                a, b = self.interval()
                rhs = self.unary()
                return cls(lhs, rhs, a, b)
        return lhs

    def unary(self) -> Formula:
        if self.at("!"):
            self.i += 1
            return Not(self.unary())
        for sym, cls in _UNARY.items():
            if self.at(sym):
                self.i += 1
                a, b = self.interval()
                return cls(self.unary(), a, b)
        if self.at("P"):
            self.i += 1
            return Previous(self.unary())
        return self.atom()

    def atom(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise ParseError(len(self.text), "a predicate, constant or '('", self.text)
        kind, value, pos = tok
        if kind == "ident":
            self.i += 1
            if value == "true":
                return TRUE
            if value == "false":
                return FALSE
            return Predicate(value)
        if self.at("("):
            self.i += 1
            f = self.implication()
            self.expect(")")
            return f
        raise ParseError(pos, "a predicate, constant or '('", self.text)

    def bound(self, allow_inf: bool) -> int | None:
        tok = self.peek()
        if tok is None:
            raise ParseError(len(self.text), "an interval bound", self.text)
        kind, value, pos = tok
        if kind == "num":
            self.i += 1
            return seconds_to_steps(float(value), self.dt)
        if kind == "ident":
            self.i += 1
            if value == "inf" and allow_inf:
                return None
            if value not in self.params:
                raise ParseError(pos, "a number or known parameter", self.text)
            return seconds_to_steps(float(self.params[value]), self.dt)
        raise ParseError(pos, "an interval bound", self.text)

    def interval(self) -> tuple[int, int | None]:
        if not self.at("["):
            return 0, None
        start = self.position()
        self.i += 1
        a = self.bound(False)
        self.expect(",")
        b = self.bound(True)
        self.expect("]")
        if b is not None and b < a:
            raise ParseError(start, "an interval with lower <= upper", self.text)
        return a, b


def parse(text: str, dt: float = 1.0, params: Mapping[str, float] | None = None) -> Formula:
    """Parse a formula; bounds are seconds converted with the step size dt."""
    return _Parser(text, dt, params or {}).parse()

"""STL abstract syntax tree.

Interval bounds are integer time steps. ``b=None`` marks an interval that
runs to the end of the signal (future operators) or back to step 0 (past
operators).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union


class Formula:
    """Base class of all STL nodes."""

    def children(self) -> tuple["Formula", ...]:
        return ()

    def __and__(self, other: "Formula") -> "And":
        return And((self, other))

    def __or__(self, other: "Formula") -> "Or":
        return Or((self, other))

    def __invert__(self) -> "Not":
        return Not(self)

    def __str__(self) -> str:
        from .printer import to_string
        return to_string(self)


@dataclass(frozen=True)
class Top(Formula):
    pass


@dataclass(frozen=True)
class Bottom(Formula):
    pass


TRUE = Top()
FALSE = Bottom()


@dataclass(frozen=True)
class Predicate(Formula):
    id: str
    negated: bool = False

    def negate(self) -> "Predicate":
        return Predicate(self.id, not self.negated)


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class And(Formula):
    args: tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))

    def children(self):
        return self.args


@dataclass(frozen=True)
class Or(Formula):
    args: tuple[Formula, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))

    def children(self):
        return self.args


@dataclass(frozen=True)
class _Unary(Formula):
    arg: Formula
    a: int = 0
    b: int | None = None

    def __post_init__(self):
        if self.a < 0 or (self.b is not None and self.b < self.a):
            raise ValueError(f"invalid interval [{self.a}, {self.b}]")

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Eventually(_Unary):
    pass


@dataclass(frozen=True)
class Globally(_Unary):
    pass


@dataclass(frozen=True)
class Once(_Unary):
    pass


@dataclass(frozen=True)
class Historically(_Unary):
    pass


@dataclass(frozen=True)
class Previous(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class _Binary(Formula):
    lhs: Formula
    rhs: Formula
    a: int = 0
    b: int | None = None

    def __post_init__(self):
        if self.a < 0 or (self.b is not None and self.b < self.a):
            raise ValueError(f"invalid interval [{self.a}, {self.b}]")

    def children(self):
        return (self.lhs, self.rhs)


@dataclass(frozen=True)
class Until(_Binary):
    pass


@dataclass(frozen=True)
class Since(_Binary):
    pass


Temporal = Union[Eventually, Globally, Once, Historically, Previous, Until, Since]
PAST_NODES = (Once, Historically, Previous, Since)
FUTURE_NODES = (Eventually, Globally, Until)


def implies(lhs: Formula, rhs: Formula) -> Or:
    return Or((Not(lhs), rhs))


def walk(f: Formula) -> Iterator[Formula]:
    yield f
    for c in f.children():
        yield from walk(c)


def predicates(f: Formula) -> set[str]:
    return {n.id for n in walk(f) if isinstance(n, Predicate)}


def depth(f: Formula) -> int:
    kids = f.children()
    return 1 + max((depth(c) for c in kids), default=0)


def is_nnf(f: Formula) -> bool:
    return not any(isinstance(n, Not) for n in walk(f))


def to_nnf(f: Formula) -> Formula:
    """Push negations down to the predicates.

    Duals: And/Or, G/F, H/O. Release has no node of its own, so a negated
    Until (Since) is rewritten exactly with G, U and Or (H, S and Or). A
    negated Previous becomes H[1,1] of the negation, which is vacuously true
    at step 0 like the negated Previous.
    """
    return _nnf(f, False)


def _nnf(f: Formula, neg: bool) -> Formula:
    if isinstance(f, Top):
        return FALSE if neg else TRUE
    if isinstance(f, Bottom):
        return TRUE if neg else FALSE
    if isinstance(f, Predicate):
        return f.negate() if neg else f
    if isinstance(f, Not):
        return _nnf(f.arg, not neg)
    if isinstance(f, And):
        args = tuple(_nnf(c, neg) for c in f.args)
        return Or(args) if neg else And(args)
    if isinstance(f, Or):
        args = tuple(_nnf(c, neg) for c in f.args)
        return And(args) if neg else Or(args)
    if isinstance(f, Globally):
        cls = Eventually if neg else Globally
        return cls(_nnf(f.arg, neg), f.a, f.b)
    if isinstance(f, Eventually):
        cls = Globally if neg else Eventually
        return cls(_nnf(f.arg, neg), f.a, f.b)
    if isinstance(f, Once):
        cls = Historically if neg else Once
        return cls(_nnf(f.arg, neg), f.a, f.b)
    if isinstance(f, Historically):
        cls = Once if neg else Historically
        return cls(_nnf(f.arg, neg), f.a, f.b)
    if isinstance(f, Previous):
        if neg:
            return Historically(_nnf(f.arg, True), 1, 1)
        return Previous(_nnf(f.arg, False))
    if isinstance(f, Until):
        if not neg:
            return Until(_nnf(f.lhs, False), _nnf(f.rhs, False), f.a, f.b)
        return _negated_until(f)
    if isinstance(f, Since):
        if not neg:
            return Since(_nnf(f.lhs, False), _nnf(f.rhs, False), f.a, f.b)
        return _negated_since(f)
    raise TypeError(f"unknown node {type(f).__name__}")


def _negated_until(f: Until) -> Formula:
    return _until_dual(to_nnf(Not(f.lhs)), to_nnf(Not(f.rhs)), f.a, f.b)


def _until_dual(np_: Formula, nq: Formula, a: int, b: int | None) -> Formula:
    """Exact NNF of not(p U[a,b] q) from nnf(!p) and nnf(!q).

    With a == 0 the negation says: q fails on the window up to and including
    the first step where p fails. Either p never fails inside the window
    (G[0,b] !q) or it fails at some m with q failing on [k, m]
    (!q U[0,b] (!p & !q)). With a > 0, a failure of p before k+a already
    rules out every witness; otherwise the a == 0 case must hold at k+a.
    """
    if a == 0:
        return Or((Globally(nq, 0, b), Until(nq, And((np_, nq)), 0, b)))
    rest = None if b is None else b - a
    return Or((Eventually(np_, 0, a - 1), Globally(_until_dual(np_, nq, 0, rest), a, a)))


def _negated_since(f: Since) -> Formula:
    return _since_dual(to_nnf(Not(f.lhs)), to_nnf(Not(f.rhs)), f.a, f.b)


def _since_dual(np_: Formula, nq: Formula, a: int, b: int | None) -> Formula:
    """Time-reversed counterpart of _until_dual."""
    if a == 0:
        return Or((Historically(nq, 0, b), Since(nq, And((np_, nq)), 0, b)))
    rest = None if b is None else b - a
    return Or((Once(np_, 0, a - 1), Historically(_since_dual(np_, nq, 0, rest), a, a)))

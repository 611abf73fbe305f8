"""Discrete-time STL semantics over finite signals.

Boolean satisfaction, max/min robustness and time-to-violation share one
recursive evaluator; they differ only in the value domain:

============  ===========  ============  =========================
domain        join / meet  top / bottom  predicate leaf
============  ===========  ============  =========================
Boolean       or / and     true / false  sig.eval
robustness    max / min    +inf / -inf   sig.rob
TV            max / min    inf / step    k when violated, else inf
============  ===========  ============  =========================

Finite-signal conventions: windows are clipped to [0, h]. An empty G or H
window is vacuously satisfied (weak). An empty F, U, O or S window has no
witness and is violated (strong); for time-to-violation such a violation is
dated at h for future operators and at k for past operators. Until requires
the left operand on [k, k'), Since on (k', k].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from .formula import (And, Bottom, Eventually, Formula, Globally, Historically, Not, Once, Or,
                      Predicate, Previous, Since, Top, Until, is_nnf, to_nnf)

EPS = 1e-9
INF = math.inf


class SignalView(Protocol):
    length: int

    def eval(self, pred_id: str, k: int) -> bool: ...

    def rob(self, pred_id: str, k: int) -> float: ...


@dataclass
class ArraySignal:
    """Signal given by per-predicate robustness sequences; truth is the sign."""
    values: Mapping[str, Sequence[float]]
    length: int = 0

    def __post_init__(self):
        if not self.length:
            self.length = len(next(iter(self.values.values()))) if self.values else 1

    def eval(self, pred_id: str, k: int) -> bool:
        return self.values[pred_id][k] > 0

    def rob(self, pred_id: str, k: int) -> float:
        return float(self.values[pred_id][k])


class _Domain:
    top: object
    bottom: object

    def leaf(self, p: Predicate, k: int): ...

    def neg(self, v): ...

    def empty_future(self, k: int): return self.bottom

    def empty_past(self, k: int): return self.bottom


class _BoolDomain(_Domain):
    top, bottom = True, False

    def __init__(self, sig: SignalView):
        self.sig = sig

    def leaf(self, p, k):
        v = self.sig.eval(p.id, k)
        return (not v) if p.negated else v

    def neg(self, v):
        return not v


class _RobDomain(_Domain):
    top, bottom = INF, -INF

    def __init__(self, sig: SignalView):
        self.sig = sig

    def leaf(self, p, k):
        v = self.sig.rob(p.id, k)
        return -v if p.negated else v

    def neg(self, v):
        return -v


class _TVDomain(_Domain):
    top = INF

    def __init__(self, sig: SignalView):
        self.sig = sig
        self.h = sig.length - 1
        self.bottom = None

    def leaf(self, p, k):
        v = self.sig.eval(p.id, k)
        if p.negated:
            v = not v
        return INF if v else k

    def neg(self, v):
        raise ValueError("time-to-violation is defined on negation normal form only")

    def empty_future(self, k):
        return self.h

    def empty_past(self, k):
        return k


class Evaluator:
    """Memoized evaluator of one formula family over one signal."""

    def __init__(self, domain: _Domain, length: int):
        self.d = domain
        self.h = length - 1
        self.memo: dict[tuple[int, int], object] = {}
        self._keep: list[Formula] = []

    def __call__(self, f: Formula, k: int):
        key = (id(f), k)
        hit = self.memo.get(key)
        if hit is not None or key in self.memo:
            return hit
        self._keep.append(f)
        v = self._eval(f, k)
        self.memo[key] = v
        return v

    def _eval(self, f: Formula, k: int):
        d, h = self.d, self.h
        if isinstance(f, Predicate):
            return d.leaf(f, k)
        if isinstance(f, Top):
            return d.top
        if isinstance(f, Bottom):
            return d.empty_past(k) if isinstance(d, _TVDomain) else d.bottom
        if isinstance(f, Not):
            return d.neg(self(f.arg, k))
        if isinstance(f, And):
            return min(self(c, k) for c in f.args)
        if isinstance(f, Or):
            return max(self(c, k) for c in f.args)
        if isinstance(f, (Globally, Eventually, Until)):
            lo = k + f.a
            hi = h if f.b is None else min(k + f.b, h)
            if isinstance(f, Globally):
                if lo > hi:
                    return d.top
                return min(self(f.arg, j) for j in range(lo, hi + 1))
            if lo > hi:
                return d.empty_future(k)
            if isinstance(f, Eventually):
                return max(self(f.arg, j) for j in range(lo, hi + 1))
            best = None
            run = d.top
            for j in range(k, lo):
                run = min(run, self(f.lhs, j))
            for j in range(lo, hi + 1):
                cand = min(self(f.rhs, j), run)
                best = cand if best is None else max(best, cand)
                run = min(run, self(f.lhs, j))
            return best
        if isinstance(f, (Historically, Once, Since)):
            hi = k - f.a
            lo = 0 if f.b is None else max(k - f.b, 0)
            if isinstance(f, Historically):
                if lo > hi:
                    return d.top
                return min(self(f.arg, j) for j in range(lo, hi + 1))
            if lo > hi:
                return d.empty_past(k)
            if isinstance(f, Once):
                return max(self(f.arg, j) for j in range(lo, hi + 1))
            best = None
            run = d.top
            for j in range(k, hi, -1):
                run = min(run, self(f.lhs, j))
            for j in range(hi, lo - 1, -1):
                cand = min(self(f.rhs, j), run)
                best = cand if best is None else max(best, cand)
                run = min(run, self(f.lhs, j))
            return best
        if isinstance(f, Previous):
            if k == 0:
                return d.empty_past(k)
            return self(f.arg, k - 1)
        raise TypeError(f"unknown node {type(f).__name__}")


def _check_step(sig: SignalView, k: int) -> None:
    if not 0 <= k < sig.length:
        raise IndexError(f"step {k} outside signal of length {sig.length}")


def eval_bool(f: Formula, sig: SignalView, k: int = 0) -> bool:
    _check_step(sig, k)
    return bool(Evaluator(_BoolDomain(sig), sig.length)(f, k))


def raw_robustness(f: Formula, sig: SignalView, k: int = 0) -> float:
    """Robustness without the zero clamp."""
    _check_step(sig, k)
    return float(Evaluator(_RobDomain(sig), sig.length)(f, k))


def robustness(f: Formula, sig: SignalView, k: int = 0) -> float:
    r = raw_robustness(f, sig, k)
    if r == 0.0:
        return EPS if eval_bool(f, sig, k) else -EPS
    return r


def time_to_violation(f: Formula, sig: SignalView, k: int = 0) -> float:
    """First step at which f is known to be violated, or inf."""
    _check_step(sig, k)
    if not is_nnf(f):
        f = to_nnf(f)
    v = Evaluator(_TVDomain(sig), sig.length)(f, k)
    return v if v == INF else int(v)


class Monitor:
    """Caches evaluations of several formulas over a single signal."""

    def __init__(self, sig: SignalView):
        self.sig = sig
        self._bool = Evaluator(_BoolDomain(sig), sig.length)
        self._rob = Evaluator(_RobDomain(sig), sig.length)
        self._tv = Evaluator(_TVDomain(sig), sig.length)
        self._nnf: dict[int, Formula] = {}

    def eval(self, f: Formula, k: int = 0) -> bool:
        return bool(self._bool(f, k))

    def robustness(self, f: Formula, k: int = 0) -> float:
        r = float(self._rob(f, k))
        if r == 0.0:
            return EPS if self.eval(f, k) else -EPS
        return r

    def tv(self, f: Formula, k: int = 0) -> float:
        g = f if is_nnf(f) else self._nnf.setdefault(id(f), to_nnf(f))
        v = self._tv(g, k)
        return v if v == INF else int(v)


def conjoin_rules(rules: Sequence[tuple[str, Formula]]) -> Formula:
    if not rules:
        raise ValueError("at least one rule is required")
    if len(rules) == 1:
        return rules[0][1]
    return And(tuple(f for _, f in rules))


def rule_tvs(rules: Sequence[tuple[str, Formula]], sig: SignalView) -> dict[str, float]:
    mon = Monitor(sig)
    return {name: mon.tv(f, 0) for name, f in rules}



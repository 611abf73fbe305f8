"""DPLL over the propositional abstraction.

Decisions follow a caller-supplied priority order (ascending |rho|) and a
preferred polarity per variable. Search stops at the first partial
assignment that already satisfies the instance, so the returned valuation
contains only decided and propagated original propositions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .abstraction import AbstractionResult, add_conflict, eval_structure

DECISION = "decision"
PROPAGATION = "propagation"


@dataclass(frozen=True)
class Valuation:
    assignments: dict[int, bool]
    decision_trail: tuple[tuple[int, bool, str], ...] = ()
    stats: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.assignments)

    @property
    def decisions(self) -> list[int]:
        return [v for v, _, tag in self.decision_trail if tag == DECISION]

    def __str__(self):
        return ", ".join(f"s{i}={'T' if v else 'F'}" for i, v in sorted(self.assignments.items()))


class _Solver:
    def __init__(self, clauses: Sequence[tuple[int, ...]], n_vars: int, originals: int,
                 structure=None, extra: Sequence[tuple[int, ...]] = ()):
        self.clauses = [tuple(c) for c in clauses]
        self.n = n_vars
        self.originals = originals
        self.structure = structure
        self.extra = [tuple(c) for c in extra]
        self.vals: list[bool | None] = [None] * (n_vars + 1)
        self.trail: list[tuple[int, bool, str, bool]] = []  # var, value, tag, flipped
        self.occ: dict[int, list[int]] = {}
        for ci, c in enumerate(self.clauses):
            for lit in c:
                self.occ.setdefault(lit, []).append(ci)
        self.total_decisions = 0
        self.conflicts = 0

    def value(self, lit: int):
        v = self.vals[abs(lit)]
        if v is None:
            return None
        return v if lit > 0 else not v

    def assign(self, var, val, tag, flipped=False):
        self.vals[var] = val
        self.trail.append((var, val, tag, flipped))

    def propagate(self, start: int) -> bool:
        """Unit propagation over literals assigned from trail position start."""
        i = start
        while i < len(self.trail):
            var, val, _, _ = self.trail[i]
            i += 1
            false_lit = -var if val else var
            for ci in self.occ.get(false_lit, ()):
                unassigned = None
                count = 0
                sat = False
                for lit in self.clauses[ci]:
                    lv = self.value(lit)
                    if lv is True:
                        sat = True
                        break
                    if lv is None:
                        count += 1
                        unassigned = lit
                if sat:
                    continue
                if count == 0:
                    return False
                if count == 1:
                    self.assign(abs(unassigned), unassigned > 0, PROPAGATION)
        return True

    def initial_units(self) -> bool:
        for c in self.clauses:
            if not c:
                return False
            if len(c) == 1:
                lv = self.value(c[0])
                if lv is False:
                    return False
                if lv is None:
                    self.assign(abs(c[0]), c[0] > 0, PROPAGATION)
        return True

    def satisfied(self) -> bool:
        def clause_ok(c):
            return any(self.value(l) is True for l in c)
        if self.structure is not None:
            partial = {i: self.vals[i] for i in range(1, self.originals + 1) if self.vals[i] is not None}
            return eval_structure(self.structure, partial) is True and all(clause_ok(c) for c in self.extra)
        return all(clause_ok(c) for c in self.clauses)

    def refuted(self) -> bool:
        if self.structure is None:
            return False
        partial = {i: self.vals[i] for i in range(1, self.originals + 1) if self.vals[i] is not None}
        return eval_structure(self.structure, partial) is False

    def backtrack(self) -> int | None:
        """Undo to the newest unflipped decision and flip it; None when exhausted."""
        while self.trail:
            var, val, tag, flipped = self.trail.pop()
            self.vals[var] = None
            if tag == DECISION and not flipped:
                pos = len(self.trail)
                self.assign(var, not val, DECISION, True)
                return pos
        return None

    def run(self, order: Sequence[int], polarity: Mapping[int, bool]):
        if not self.initial_units() or not self.propagate(0):
            return None
        while True:
            if self.satisfied():
                return self.result()
            nxt = next((v for v in order if self.vals[v] is None), None)
            conflict = nxt is None or self.refuted()
            if not conflict:
                pos = len(self.trail)
                self.total_decisions += 1
                self.assign(nxt, polarity.get(nxt, True), DECISION)
                conflict = not self.propagate(pos)
            while conflict:
                self.conflicts += 1
                pos = self.backtrack()
                if pos is None:
                    return None
                conflict = not self.propagate(pos) or self.refuted()

    def result(self) -> Valuation:
        keep = [(v, val, tag) for v, val, tag, _ in self.trail if v <= self.originals]
        return Valuation({v: val for v, val, _ in keep}, tuple(keep),
                         {"decisions": self.total_decisions, "conflicts": self.conflicts})


def _normalise(instance, n_vars=None):
    if isinstance(instance, AbstractionResult):
        return (list(instance.cnf), instance.n_vars, instance.n_props, instance.structure,
                list(instance.learned_conflicts))
    clauses = [tuple(c) for c in instance]
    n = max((abs(l) for c in clauses for l in c), default=0)
    n = max(n, n_vars or 0)
    return clauses, n, n, None, []


def solve(instance, order: Sequence[int] | None = None,
          polarity: Mapping[int, bool] | None = None, n_vars: int | None = None) -> Valuation | None:
    """Return a satisfying partial valuation, or None when unsatisfiable.

    ``instance`` is an AbstractionResult or a list of clauses of signed
    1-based variable indices. Variables missing from ``order`` are decided
    after it in ascending index order. ``polarity`` gives the value tried
    first for each variable (default True).
    """
    clauses, n, originals, structure, extra = _normalise(instance, n_vars)
    full_order = [v for v in (order or []) if 1 <= v <= originals]
    seen = set(full_order)
    full_order += [v for v in range(1, originals + 1) if v not in seen]
    solver = _Solver(clauses + extra, n, originals, structure, extra)
    return solver.run(full_order, polarity or {})


def first_decision_flip(ar: AbstractionResult, order: Sequence[int], banned: Iterable = (),
                        polarity: Mapping[int, bool] | None = None) -> Valuation | None:
    """Solve after blocking every banned valuation not yet blocked."""
    for b in banned:
        probe = add_conflict(ar, b)
        if probe.learned_conflicts[-1] not in ar.learned_conflicts:
            ar = probe
    return solve(ar, order, polarity)


def order_by_robustness(rho: Mapping[int, float]) -> list[int]:
    """Ascending |rho|, ties by ascending index."""
    return sorted(rho, key=lambda i: (abs(rho[i]), i))


def flipped_polarity(trace_values: Mapping[int, bool]) -> dict[int, bool]:
    return {i: not v for i, v in trace_values.items()}


def to_dimacs(instance) -> str:
    clauses, n, originals, _, extra = _normalise(instance)
    all_clauses = clauses + extra
    lines = [f"c originals 1..{originals}", f"p cnf {n} {len(all_clauses)}"]
    lines += [" ".join(str(l) for l in c) + " 0" for c in all_clauses]
    return "\n".join(lines) + "\n"


def check_model(clauses: Iterable[tuple[int, ...]], assignment: Mapping[int, bool]) -> bool:
    return all(any(assignment.get(abs(l)) == (l > 0) for l in c) for c in clauses)

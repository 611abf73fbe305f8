"""Propositional abstraction of G-rooted rules.

Pipeline: NNF, distribution of the outer G over the Boolean structure,
replacement of every temporally scoped unit by a proposition, Tseitin CNF.
Proposition indices are 1-based in first-occurrence order; auxiliary
variables follow them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Union

from .predicates import CATALOG, UNCATEGORIZED
from .stl import And, Formula, Globally, Historically, Or, is_nnf, to_nnf
from .stl.formula import PAST_NODES, Predicate


class NotInNNF(ValueError):
    pass


@dataclass(frozen=True)
class Proposition:
    index: int
    subformula: Formula
    contains_past_only: bool
    predicate_categories: frozenset[str]

    def __str__(self):
        return f"s{self.index} := {self.subformula}"


# Boolean skeleton: an int is a proposition index, otherwise ("and"|"or", children).
Structure = Union[int, tuple]


@dataclass(frozen=True)
class AbstractionResult:
    cnf: tuple[tuple[int, ...], ...]
    propositions: tuple[Proposition, ...]
    tseitin_aux: frozenset[int]
    learned_conflicts: tuple[tuple[int, ...], ...] = ()
    structure: Structure | None = None
    decomposed: Formula | None = None

    @property
    def n_props(self) -> int:
        return len(self.propositions)

    @property
    def n_vars(self) -> int:
        return self.n_props + len(self.tseitin_aux)

    def clauses(self) -> list[tuple[int, ...]]:
        return list(self.cnf) + list(self.learned_conflicts)

    def proposition(self, index: int) -> Proposition:
        return self.propositions[index - 1]


# -- decomposition ----------------------------------------------------------

def _is_unbounded_g(f: Formula) -> bool:
    return isinstance(f, Globally) and f.a == 0 and f.b is None


def distribute_historically(f: Formula) -> Formula:
    """H[a,b](x & y) -> H[a,b](x) & H[a,b](y), applied everywhere (exact)."""
    if isinstance(f, Historically):
        arg = distribute_historically(f.arg)
        if isinstance(arg, And):
            return And(tuple(distribute_historically(Historically(c, f.a, f.b)) for c in arg.args))
        return Historically(arg, f.a, f.b)
    kids = f.children()
    if not kids:
        return f
    new = tuple(distribute_historically(c) for c in kids)
    if new == kids:
        return f
    if isinstance(f, (And, Or)):
        return type(f)(new)
    fields = dict(f.__dict__)
    if "arg" in fields:
        fields["arg"] = new[0]
    else:
        fields["lhs"], fields["rhs"] = new
    return type(f)(**fields)


def decompose(f: Formula, log: list | None = None) -> Formula:
    """Boolean combination of G-scoped units whose models are models of f.

    G distributes over And exactly and over Or by strengthening. Each
    rewrite is appended to ``log`` as (rule, "exact" | "strengthening").
    """
    if not is_nnf(f):
        raise NotInNNF(str(f))
    f = distribute_historically(f)
    return _flatten(_top(f, log))


def _top(f: Formula, log) -> Formula:
    if isinstance(f, (And, Or)):
        return type(f)(tuple(_top(c, log) for c in f.args))
    if _is_unbounded_g(f):
        return _scope(f.arg, log)
    return f


def _scope(x: Formula, log) -> Formula:
    if isinstance(x, And):
        if log is not None:
            log.append(("G over And", "exact"))
        return And(tuple(_scope(c, log) for c in x.args))
    if isinstance(x, Or):
        if log is not None:
            log.append(("G over Or", "strengthening"))
        return Or(tuple(_scope(c, log) for c in x.args))
    if _is_unbounded_g(x):
        if log is not None:
            log.append(("G G merge", "exact"))
        return _scope(x.arg, log)
    return Globally(x)


def _flatten(f: Formula) -> Formula:
    if not isinstance(f, (And, Or)):
        return f
    out: list[Formula] = []
    for c in f.args:
        c = _flatten(c)
        parts = c.args if type(c) is type(f) else (c,)
        for p in parts:
            if p not in out:
                out.append(p)
    if len(out) == 1:
        return out[0]
    return type(f)(tuple(out))


# -- propositions -----------------------------------------------------------

def contains_past_only(f: Formula) -> bool:
    """True when every predicate occurrence sits below a past-time operator."""
    found = []

    def visit(node, under_past):
        if isinstance(node, Predicate):
            found.append(under_past)
            return
        past = under_past or isinstance(node, PAST_NODES)
        for c in node.children():
            visit(c, past)
    visit(f, False)
    return bool(found) and all(found)


def categories(f: Formula) -> frozenset[str]:
    from .stl import predicates as pred_ids
    out = set()
    for pid in pred_ids(f):
        pd = CATALOG.get(pid)
        out.add(pd.category if pd else UNCATEGORIZED)
    return frozenset(out)


def _leaves(f: Formula, acc: list[Formula]) -> None:
    if isinstance(f, (And, Or)):
        for c in f.args:
            _leaves(c, acc)
    elif f not in acc:
        acc.append(f)


def to_cnf(decomposed: Formula) -> AbstractionResult:
    leaves: list[Formula] = []
    _leaves(decomposed, leaves)
    props = tuple(
        Proposition(i + 1, leaf, contains_past_only(leaf), categories(leaf))
        for i, leaf in enumerate(leaves)
    )
    index = {leaf: i + 1 for i, leaf in enumerate(leaves)}
    clauses: list[tuple[int, ...]] = []
    aux: list[int] = []
    next_var = [len(leaves)]

    def skeleton(f):
        if isinstance(f, And):
            return ("and", tuple(skeleton(c) for c in f.args))
        if isinstance(f, Or):
            return ("or", tuple(skeleton(c) for c in f.args))
        return index[f]

    def literal(s) -> int:
        """Variable standing for sub-skeleton s, defined by Tseitin clauses."""
        if isinstance(s, int):
            return s
        kind, kids = s
        lits = [literal(c) for c in kids]
        next_var[0] += 1
        v = next_var[0]
        aux.append(v)
        if kind == "and":
            clauses.extend((-v, c) for c in lits)
            clauses.append((v,) + tuple(-c for c in lits))
        else:
            clauses.append((-v,) + tuple(lits))
            clauses.extend((v, -c) for c in lits)
        return v

    struct = skeleton(decomposed)
    top = struct
    conjuncts = top[1] if isinstance(top, tuple) and top[0] == "and" else (top,)
    for c in conjuncts:
        if isinstance(c, tuple) and c[0] == "or":
            clauses.append(tuple(literal(x) for x in c[1]))
        else:
            clauses.append((literal(c),))
    return AbstractionResult(tuple(clauses), props, frozenset(aux), (), struct, decomposed)


def abstract(rule: Formula) -> AbstractionResult:
    return to_cnf(decompose(to_nnf(rule)))


def add_conflict(ar: AbstractionResult, valuation) -> AbstractionResult:
    """Block a partial valuation by adding the negation of its conjunction."""
    assignments = _assignments(valuation)
    clause = tuple(-i if v else i for i, v in sorted(assignments.items()) if i not in ar.tseitin_aux)
    if not clause:
        raise ValueError("cannot block an empty valuation")
    return replace(ar, learned_conflicts=ar.learned_conflicts + (clause,))


def _assignments(valuation) -> Mapping[int, bool]:
    return getattr(valuation, "assignments", valuation)


def eval_structure(struct: Structure, assignment: Mapping[int, bool]) -> bool | None:
    """Three-valued (Kleene) value of the skeleton under a partial assignment."""
    if isinstance(struct, int):
        return assignment.get(struct)
    kind, kids = struct
    vals = [eval_structure(k, assignment) for k in kids]
    if kind == "and":
        if any(v is False for v in vals):
            return False
        return True if all(v is True for v in vals) else None
    if any(v is True for v in vals):
        return True
    return False if all(v is False for v in vals) else None


def structure_to_string(struct: Structure) -> str:
    if isinstance(struct, int):
        return f"s{struct}"
    kind, kids = struct
    sep = " & " if kind == "and" else " | "
    parts = []
    for k in kids:
        t = structure_to_string(k)
        parts.append(f"({t})" if isinstance(k, tuple) else t)
    return sep.join(parts)


def cnf_to_string(clauses: Iterable[tuple[int, ...]]) -> str:
    def lit(x):
        return f"!s{-x}" if x < 0 else f"s{x}"
    out = []
    for c in clauses:
        body = " | ".join(lit(x) for x in c)
        out.append(f"({body})" if len(c) > 1 else body)
    return " & ".join(out)


def describe(rule: Formula) -> dict:
    """The intermediate stages of the abstraction, as printable strings."""
    nnf = to_nnf(rule)
    log: list = []
    dec = decompose(nnf, log)
    ar = to_cnf(dec)
    return {
        "nnf": str(nnf),
        "decomposed": str(dec),
        "skeleton": structure_to_string(ar.structure),
        "cnf": cnf_to_string(ar.cnf),
        "propositions": {f"s{p.index}": str(p.subformula) for p in ar.propositions},
        "aux": sorted(ar.tseitin_aux),
        "rewrites": log,
    }


def merge(results: Iterable[tuple[str, AbstractionResult]]) -> AbstractionResult:
    """Abstraction of a conjunction of rules, re-indexed into one namespace."""
    rules = [ar.decomposed for _, ar in results]
    return to_cnf(_flatten(And(tuple(rules)) if len(rules) > 1 else rules[0]))


__all__ = [
    "AbstractionResult", "NotInNNF", "Proposition", "abstract", "add_conflict", "categories",
    "contains_past_only", "cnf_to_string", "decompose", "describe", "distribute_historically",
    "eval_structure", "merge", "structure_to_string", "to_cnf",
]

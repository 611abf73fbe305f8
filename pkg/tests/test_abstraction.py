import itertools
import random

import pytest

from oracles import BruteSTL, check_equisat, nested_truth, random_formula, random_tree, random_values
from rulerepair import abstraction as AB
from rulerepair.predicates import rule_library
from rulerepair.stl import And, Globally, Historically, Not, Or, Predicate, to_nnf

p1, p2, p3 = (Predicate(n) for n in ("p1", "p2", "p3"))


def test_g_over_and_is_exact():
    log = []
    assert AB.decompose(Globally(And((p1, p2))), log) == And((Globally(p1), Globally(p2)))
    assert log == [("G over And", "exact")]


def test_g_over_or_strengthens():
    log = []
    assert AB.decompose(Globally(Or((p1, p2))), log) == Or((Globally(p1), Globally(p2)))
    assert log == [("G over Or", "strengthening")]


def test_historically_distributes():
    f = Historically(And((p1, p2)), 0, 3)
    assert AB.distribute_historically(f) == And((Historically(p1, 0, 3), Historically(p2, 0, 3)))


def test_not_in_nnf_rejected():
    with pytest.raises(AB.NotInNNF):
        AB.decompose(Globally(Not(Or((p1, p2)))))


def test_in1_single_clause():
    ar = AB.abstract(rule_library(0.2)["IN1"].formula)
    assert ar.n_props == 5
    assert ar.cnf == ((1, 2, 3, 4, 5),)
    assert not ar.tseitin_aux
    assert [p.contains_past_only for p in ar.propositions] == [True, False, False, False, True]


def test_tseitin_small_example():
    # (a & b) | c
    dec = Or((And((Globally(p1), Globally(p2))), Globally(p3)))
    ar = AB.to_cnf(dec)
    assert ar.n_props == 3 and len(ar.tseitin_aux) == 1
    check_equisat(ar, lambda a: (a[1] and a[2]) or a[3])


def test_add_conflict_clauses():
    ar = AB.abstract(rule_library(0.2)["IN1"].formula)
    assert AB.add_conflict(ar, {1: True}).learned_conflicts == ((-1,),)
    assert AB.add_conflict(ar, {1: False, 2: True}).learned_conflicts == ((1, -2),)
    with pytest.raises(ValueError):
        AB.add_conflict(ar, {})


def test_deterministic_indexing():
    lib = rule_library(0.2)
    for name in lib:
        assert AB.abstract(lib[name].formula) == AB.abstract(lib[name].formula)


def test_deduplication_is_structural():
    dec = And((Globally(p1), Or((Globally(p1), Globally(p2)))))
    ar = AB.to_cnf(dec)
    assert ar.n_props == 2


def test_kleene_structure():
    s = ("or", (1, ("and", (2, 3))))
    assert AB.eval_structure(s, {1: True}) is True
    assert AB.eval_structure(s, {2: True}) is None
    assert AB.eval_structure(s, {1: False, 2: False}) is False


def test_tseitin_equisatisfiable_exhaustive():
    rng = random.Random(17)
    for n_leaves in range(1, 11):
        for _ in range(8 if n_leaves < 9 else 3):
            leaves = [Globally(Predicate(f"q{i}")) for i in range(n_leaves)]
            tree = random_tree(rng, leaves)
            ar = AB.to_cnf(tree)
            idx = {p.subformula: p.index for p in ar.propositions}
            check_equisat(ar, lambda a: nested_truth(tree, {leaf: a[idx[leaf]] for leaf in leaves}))


def test_decomposition_strengthens():
    rng = random.Random(23)
    hits = 0
    for _ in range(1000):
        body = random_formula(rng, 3, nnf=True)
        f = Globally(body)
        d = AB.decompose(to_nnf(f))
        n = rng.randint(1, 12)
        vals = random_values(rng, n)
        o = BruteSTL(vals, n)
        if o.sat(d, 0):
            hits += 1
            assert o.sat(f, 0)
    assert hits > 50


def test_merge_reindexes():
    lib = rule_library(0.2)
    g1 = AB.abstract(lib["G1"].formula)
    g3 = AB.abstract(lib["G3"].formula)
    m = AB.merge([("G1", g1), ("G3", g3)])
    assert m.n_props == g1.n_props + g3.n_props
    assert [p.subformula for p in m.propositions] == [p.subformula for p in g1.propositions + g3.propositions]


def test_describe_lists_stages():
    d = AB.describe(rule_library(0.2)["IN1"].formula)
    assert set(d) >= {"nnf", "decomposed", "cnf", "propositions", "rewrites"}
    assert d["cnf"] == "(s1 | s2 | s3 | s4 | s5)"


def test_categories_and_past_flags():
    ar = AB.abstract(rule_library(0.2)["G1"].formula)
    past = [p.index for p in ar.propositions if p.contains_past_only]
    assert past == [4]
    assert all(p.predicate_categories for p in ar.propositions)


def test_exhaustive_small_valuations_are_models():
    # every full assignment that satisfies the skeleton satisfies the CNF after extension
    ar = AB.abstract(rule_library(0.2)["IN4s"].formula)
    for bits in itertools.product((False, True), repeat=ar.n_props):
        a = dict(enumerate(bits, 1))
        assert AB.eval_structure(ar.structure, a) in (True, False)

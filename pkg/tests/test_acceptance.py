"""Acceptance criteria, one test each.

The oracles live in oracles.py and are written from the definitions; the
package code under test is only ever compared against them.
"""
import math
import random
import time

import numpy as np
import pytest

from make_scenarios import find_witness
from oracles import (BruteSTL, check_equisat, fuzz, nested_truth, random_cnf, random_formula,
                     random_tree, random_values, satisfies_partial, tc_scan, truth_table_sat)
from rulerepair import abstraction as AB
from rulerepair import predicates as P
from rulerepair.criticality import TTB, Maneuver, complies, requirement
from rulerepair.engine import EngineConfig, Infeasible, Repaired, abstraction_for, repair, resolve_rules, run_batch
from rulerepair.predicates import rule_library
from rulerepair.reach import compute_reach
from rulerepair.repair_opt import splice_and_verify
from rulerepair.sat import check_model, solve
from rulerepair.stl import (ArraySignal, Globally, Monitor, Predicate, conjoin_rules, eval_bool, robustness,
                            time_to_violation, to_nnf)
from rulerepair.world_model import (Input, Trajectory, bundled_scenario_dir, dynamics_residual, extrapolate,
                                    scenario_from_dict)

N_STL = 10_000
N_CNF = 10_000
N_ROLLOUTS = 1_000
N_FUZZ = 100
STANDSTILL_STEPS = 15  # 3 s at 0.2 s


def _stl_instances(seed, n):
    rng = random.Random(seed)
    for _ in range(n):
        length = rng.randint(1, 12)
        vals = random_values(rng, length)
        yield (random_formula(rng, 3), random_formula(rng, 3, nnf=True), vals, length, rng.randrange(length))


def test_criterion_1_stl_semantics_match_oracle():
    t0 = time.perf_counter()
    bad = []
    for i, (f, g, vals, n, k) in enumerate(_stl_instances(101, N_STL)):
        sig = ArraySignal(vals, n)
        o = BruteSTL(vals, n)
        if robustness(f, sig, k) != pytest.approx(o.rob(f, k), abs=1e-12):
            bad.append((i, "robustness"))
        if eval_bool(f, sig, k) != o.sat(f, k):
            bad.append((i, "eval_bool"))
        if time_to_violation(g, sig, k) != o.tv(g, k):
            bad.append((i, "time_to_violation"))
        # the monitor accepts any formula and normalises it first
        if time_to_violation(f, sig, k) != o.tv(to_nnf(f), k):
            bad.append((i, "time_to_violation (non-NNF input)"))
    elapsed = time.perf_counter() - t0
    assert not bad, bad[:10]
    assert elapsed < 60.0


def test_criterion_2_sign_soundness():
    bad = []
    for i, (f, g, vals, n, k) in enumerate(_stl_instances(202, N_STL)):
        sig = ArraySignal(vals, n)
        for h in (f, g):
            r = robustness(h, sig, k)
            if r == 0 or (r > 0) != eval_bool(h, sig, k):
                bad.append(i)
    assert not bad, bad[:10]


def test_criterion_3_abstraction():
    lib = rule_library(0.2)
    in1 = AB.abstract(lib["IN1"].formula)
    assert in1.n_props == 5 and in1.cnf == ((1, 2, 3, 4, 5),) and not in1.tseitin_aux

    g13 = abstraction_for(resolve_rules(["G1", "G3"], 0.2))
    assert g13.n_props == 8
    assert g13.cnf == ((1, 2, 3, 4), (5,), (6,), (7,), (8,))

    rng = random.Random(303)
    for n_leaves in range(1, 11):
        for _ in range(10 if n_leaves < 9 else 4):
            leaves = [Globally(Predicate(f"q{i}")) for i in range(n_leaves)]
            tree = random_tree(rng, leaves)
            ar = AB.to_cnf(tree)
            idx = {p.subformula: p.index for p in ar.propositions}
            check_equisat(ar, lambda a: nested_truth(tree, {leaf: a[idx[leaf]] for leaf in leaves}))

    # decomposed formula satisfied => original satisfied
    hits = 0
    for _ in range(1000):
        f = Globally(random_formula(rng, 3, nnf=True))
        d = AB.decompose(to_nnf(f))
        n = rng.randint(1, 12)
        o = BruteSTL(random_values(rng, n), n)
        if o.sat(d, 0):
            hits += 1
            assert o.sat(f, 0)
    assert hits > 0


def test_criterion_4_dpll_matches_truth_table():
    rng = random.Random(404)
    n_sat = 0
    for _ in range(N_CNF):
        n, clauses = random_cnf(rng, 15, 60)
        v = solve(clauses, n_vars=n)
        assert (v is not None) == truth_table_sat(n, clauses), clauses
        if v is not None:
            n_sat += 1
            assert satisfies_partial(clauses, v.assignments) and check_model(clauses, v.assignments)
    # both verdicts must actually occur
    assert 0 < n_sat < N_CNF


# -- shared end-to-end runs ------------------------------------------------------


@pytest.fixture(scope="module")
def fuzzed(docs):
    rng = np.random.default_rng(606)
    names = sorted(docs)
    out = []
    for i in range(N_FUZZ):
        doc = fuzz(docs[names[i % len(names)]], rng)
        doc["name"] = f"{doc['name']}_fuzz{i}"
        sc = scenario_from_dict(doc)
        out.append((doc, sc, repair(sc, None, EngineConfig())))
    return out


def _admissible(sc, traj, k):
    sb = sc.state_bounds
    for x in traj.states[k + 1:]:
        if sb.violations(x, 0.0) or (sc.forward_only and x.s_dot < 0):
            return False
    cand = sc.with_trajectory(traj)
    if any(j > k for j in P.collision_steps(cand, traj.states)):
        return False
    return not P.off_road_steps(cand, traj.states, k + 1)


def test_criterion_5_reach_soundness(scenarios, outcomes):
    """Certified rollouts from the cut-off state never leave the reachable set.

    For a repaired scenario the rollouts must meet the repair valuation at TV
    and every rule; they are checked against the reachable set the engine
    built. Scenarios without a repair have no valuation, so their rollouts
    are checked for admissibility against the constraint-free set from step 0.
    """
    report = {}
    for name, sc in scenarios.items():
        out = outcomes[name]
        rules = resolve_rules(sc.rules, sc.dt)
        phi = conjoin_rules(rules)
        if isinstance(out, Repaired):
            k, rs, tv = out.k_cut, out.reach, out.diagnostics["tv"]
            req = requirement(abstraction_for(rules), out.valuation, sorted(out.valuation))
            nominal = out.trajectory.inputs[k:]
        else:
            k, rs, req = 0, compute_reach(sc, 0), None
            nominal = sc.ego_trajectory.inputs
        tmpl = Maneuver(TTB).templates(sc, k)
        a = np.array([[u.u_long, u.u_lat] for u in nominal])
        b = np.array([[u.u_long, u.u_lat] for u in tmpl[0]]) if tmpl else a
        rng = np.random.default_rng(505)
        prefix = list(sc.ego_trajectory.inputs[:k])
        certified = escapes = tries = 0
        while certified < N_ROLLOUTS and tries < 30 * N_ROLLOUTS:
            tries += 1
            lam = rng.uniform()
            u = lam * a + (1 - lam) * b + rng.normal(size=a.shape) * [rng.uniform(0, 5), rng.uniform(0, 0.3)]
            traj = Trajectory.from_inputs(sc.ego_trajectory.states[0],
                                          prefix + [Input(float(x), float(y)) for x, y in u], sc.dt)
            if not _admissible(sc, traj, k):
                continue
            if req is not None:
                if not complies(sc, traj, req, tv, k + 1):
                    continue
                if Monitor(P.TraceSignal(sc.with_trajectory(traj))).tv(phi, 0) != math.inf:
                    continue
            certified += 1
            if not all(rs.contains(t, x.s, x.s_dot, x.d, 1e-6) for t, x in enumerate(traj.states[k:], k)):
                escapes += 1
        report[name] = (certified, escapes)
    assert all(c == N_ROLLOUTS for c, _ in report.values()), report
    assert all(e == 0 for _, e in report.values()), report


def _oracle_compliant(sc, rules):
    sig = P.TraceSignal(sc)
    phi = conjoin_rules(rules)
    ids = P._predicate_ids(phi)
    vals = {pid: [sig.rob(pid, k) for k in range(sc.horizon + 1)] for pid in ids}
    return BruteSTL(vals, sc.horizon + 1).sat(phi, 0)


def test_criterion_6_end_to_end_soundness(docs, scenarios, outcomes, fuzzed):
    runs = [(docs[n], scenarios[n], outcomes[n]) for n in sorted(docs)] + fuzzed
    unsound, missed = [], []
    n_repaired = n_witness = 0
    for doc, sc, out in runs:
        rules = resolve_rules(sc.rules, sc.dt)
        if isinstance(out, Repaired):
            n_repaired += 1
            if not _oracle_compliant(sc.with_trajectory(out.trajectory), rules):
                unsound.append(sc.name)
        w = find_witness(doc)
        if w is not None:
            n_witness += 1
            if isinstance(out, Infeasible):
                missed.append((sc.name, w["k"], w["maneuver"]))
    assert not unsound, unsound
    assert not missed, missed
    assert n_repaired > 0 and n_witness > 0


def _splice_ok(sc, inputs, k, rule):
    return splice_and_verify(sc, inputs, k, rule).ok


def _standstill_before_line(sc, traj):
    sig = P.TraceSignal(sc.with_trajectory(traj))
    good = [sig.eval("in_standstill", k) and sig.eval("stop_line_in_front", k) for k in range(sc.horizon + 1)]
    run = best = 0
    for g in good:
        run = run + 1 if g else 0
        best = max(best, run)
    # a window of STANDSTILL_STEPS steps spans STANDSTILL_STEPS + 1 samples
    return best >= STANDSTILL_STEPS + 1, best


def test_criterion_7_reconstructed_exemplars(scenarios, outcomes):
    failures = []

    def check(ok, what):
        if not ok:
            failures.append(what)

    for name in ("stopline", "multirule", "priority"):
        sc, out = scenarios[name], outcomes[name]
        if not isinstance(out, Repaired):
            failures.append(f"{name}: {out.kind}")
            continue
        phi = conjoin_rules(resolve_rules(sc.rules, sc.dt))
        k_ref = tc_scan(sc, phi, _splice_ok)
        check(abs(out.k_cut - k_ref) <= 1, f"{name}: k_cut {out.k_cut} vs scan {k_ref}")
        check(Monitor(P.TraceSignal(sc.with_trajectory(out.trajectory))).tv(phi, 0) == math.inf,
              f"{name}: repaired trajectory violates")

    # (a) stop line
    sc, out = scenarios["stopline"], outcomes["stopline"]
    ar = abstraction_for(resolve_rules(sc.rules, sc.dt))
    hist = out.diagnostics["iterations"]
    check(out.iterations == 2, f"stopline: repaired at iteration {out.iterations}")
    check(hist[0]["failure"] == "no_actionable_proposition", "stopline: iteration 1 not rejected as inactionable")
    rejected = [int(lit.split("=")[0][1:]) for lit in hist[0]["valuation"].split(", ")]
    check(all(ar.proposition(j).contains_past_only for j in rejected), "stopline: rejected literal not past-only")
    ok, longest = _standstill_before_line(sc, out.trajectory)
    check(ok, f"stopline: longest standstill before the line is {longest} samples, "
              f"need {STANDSTILL_STEPS + 1} (terminal speed "
              f"{out.trajectory.states[-1].s_dot:.2f} m/s)")

    # (b) multiple rules
    sc, out = scenarios["multirule"], outcomes["multirule"]
    check(list(sc.rules) == ["G1", "G3"], "multirule: rules are not G1, G3")
    check(out.trajectory.states[-1].s_dot < sc.ego_trajectory.states[-1].s_dot, "multirule: no braking")

    # (c) priority at the conflict area
    sc, out = scenarios["priority"], outcomes["priority"]
    ca = sc.road.conflict_areas[0]
    obs = sc.obstacle(ca.obstacle)
    entry = ca.ego_interval[0]
    for k, x in enumerate(out.trajectory.states):
        xo, _ = extrapolate(obs, k, sc.dt)
        if xo.s - obs.length / 2 >= ca.obstacle_interval[1]:
            break
        check(x.s + sc.ego_length / 2 <= entry + 1e-6, f"priority: ego front {x.s + sc.ego_length / 2:.3f} "
                                                        f"past entry {entry} at step {k}")
    assert not failures, failures


def test_criterion_8_runtime():
    run_batch(bundled_scenario_dir())  # warm caches and imports
    rep = run_batch(bundled_scenario_dir())
    assert rep["summary"]["mean_time_s"] <= 0.5, rep["summary"]


def test_criterion_9_prefix_and_dynamics(scenarios, outcomes, fuzzed):
    runs = [(scenarios[n], outcomes[n]) for n in sorted(scenarios)] + [(sc, out) for _, sc, out in fuzzed]
    checked = 0
    for sc, out in runs:
        if not isinstance(out, Repaired):
            continue
        checked += 1
        base = sc.ego_trajectory
        assert out.trajectory.states[:out.k_cut + 1] == base.states[:out.k_cut + 1], sc.name
        assert out.trajectory.inputs[:out.k_cut] == base.inputs[:out.k_cut], sc.name
        assert dynamics_residual(out.trajectory, sc.dt) <= 1e-6, sc.name
    assert checked > 0

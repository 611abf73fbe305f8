"""Reference implementations used only by the tests.

Everything here is written from the definitions, without reusing the
package's evaluators, solvers or condensed dynamics.
"""
from __future__ import annotations

import copy
import itertools
import math
import random

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linprog

from rulerepair.stl import (And, Eventually, Globally, Historically, Not, Once, Or, Predicate, Previous,
                            Since, Until)
from rulerepair.stl.formula import Bottom, Top

INF = math.inf

# -- STL ----------------------------------------------------------------------


def _future(f, k, h):
    last = h if f.b is None else min(k + f.b, h)
    return list(range(k + f.a, last + 1))


def _past(f, k):
    first = 0 if f.b is None else max(k - f.b, 0)
    return list(range(first, k - f.a + 1))


class BruteSTL:
    """Direct recursion of the robustness and time-to-violation definitions.

    ``values[p][k]`` is the robustness of predicate p at step k; its sign is
    the truth value.
    """

    def __init__(self, values: dict, length: int):
        self.v = values
        self.h = length - 1
        self.cache = {}

    def _memo(self, tag, f, k, fn):
        key = (tag, id(f), k)
        if key not in self.cache:
            self.cache[key] = (fn(f, k), f)
        return self.cache[key][0]

    # robustness ------------------------------------------------------------
    def rob(self, f, k):
        return self._memo("r", f, k, self._rob)

    def _rob(self, f, k):
        h = self.h
        if isinstance(f, Predicate):
            r = self.v[f.id][k]
            return -r if f.negated else r
        if isinstance(f, Top):
            return INF
        if isinstance(f, Bottom):
            return -INF
        if isinstance(f, Not):
            return -self.rob(f.arg, k)
        if isinstance(f, And):
            return min(self.rob(g, k) for g in f.args)
        if isinstance(f, Or):
            return max(self.rob(g, k) for g in f.args)
        if isinstance(f, Globally):
            return min((self.rob(f.arg, j) for j in _future(f, k, h)), default=INF)
        if isinstance(f, Eventually):
            return max((self.rob(f.arg, j) for j in _future(f, k, h)), default=-INF)
        if isinstance(f, Historically):
            return min((self.rob(f.arg, j) for j in _past(f, k)), default=INF)
        if isinstance(f, Once):
            return max((self.rob(f.arg, j) for j in _past(f, k)), default=-INF)
        if isinstance(f, Until):
            best = -INF
            for j in _future(f, k, h):
                hold = min([self.rob(f.lhs, i) for i in range(k, j)], default=INF)
                best = max(best, min(self.rob(f.rhs, j), hold))
            return best
        if isinstance(f, Since):
            best = -INF
            for j in _past(f, k):
                hold = min([self.rob(f.lhs, i) for i in range(j + 1, k + 1)], default=INF)
                best = max(best, min(self.rob(f.rhs, j), hold))
            return best
        if isinstance(f, Previous):
            return -INF if k == 0 else self.rob(f.arg, k - 1)
        raise TypeError(f)

    # Boolean ---------------------------------------------------------------
    def sat(self, f, k):
        return self._memo("b", f, k, self._sat)

    def _sat(self, f, k):
        h = self.h
        if isinstance(f, Predicate):
            return (self.v[f.id][k] > 0) != f.negated
        if isinstance(f, Top):
            return True
        if isinstance(f, Bottom):
            return False
        if isinstance(f, Not):
            return not self.sat(f.arg, k)
        if isinstance(f, And):
            return all(self.sat(g, k) for g in f.args)
        if isinstance(f, Or):
            return any(self.sat(g, k) for g in f.args)
        if isinstance(f, Globally):
            return all(self.sat(f.arg, j) for j in _future(f, k, h))
        if isinstance(f, Eventually):
            return any(self.sat(f.arg, j) for j in _future(f, k, h))
        if isinstance(f, Historically):
            return all(self.sat(f.arg, j) for j in _past(f, k))
        if isinstance(f, Once):
            return any(self.sat(f.arg, j) for j in _past(f, k))
        if isinstance(f, Until):
            return any(self.sat(f.rhs, j) and all(self.sat(f.lhs, i) for i in range(k, j))
                       for j in _future(f, k, h))
        if isinstance(f, Since):
            return any(self.sat(f.rhs, j) and all(self.sat(f.lhs, i) for i in range(j + 1, k + 1))
                       for j in _past(f, k))
        if isinstance(f, Previous):
            return k > 0 and self.sat(f.arg, k - 1)
        raise TypeError(f)

    # time to violation (NNF input) -------------------------------------------
    def tv(self, f, k):
        return self._memo("t", f, k, self._tv)

    def _tv(self, f, k):
        h = self.h
        if isinstance(f, Predicate):
            ok = (self.v[f.id][k] > 0) != f.negated
            return INF if ok else k
        if isinstance(f, Top):
            return INF
        if isinstance(f, Bottom):
            return k
        if isinstance(f, And):
            return min(self.tv(g, k) for g in f.args)
        if isinstance(f, Or):
            return max(self.tv(g, k) for g in f.args)
        if isinstance(f, Globally):
            return min((self.tv(f.arg, j) for j in _future(f, k, h)), default=INF)
        if isinstance(f, Eventually):
            return max((self.tv(f.arg, j) for j in _future(f, k, h)), default=h)
        if isinstance(f, Historically):
            return min((self.tv(f.arg, j) for j in _past(f, k)), default=INF)
        if isinstance(f, Once):
            return max((self.tv(f.arg, j) for j in _past(f, k)), default=k)
        if isinstance(f, Until):
            w = _future(f, k, h)
            if not w:
                return h
            return max(min(self.tv(f.rhs, j), min([self.tv(f.lhs, i) for i in range(k, j)], default=INF))
                       for j in w)
        if isinstance(f, Since):
            w = _past(f, k)
            if not w:
                return k
            return max(min(self.tv(f.rhs, j), min([self.tv(f.lhs, i) for i in range(j + 1, k + 1)], default=INF))
                       for j in w)
        if isinstance(f, Previous):
            return k if k == 0 else self.tv(f.arg, k - 1)
        raise TypeError(f"not in negation normal form: {f}")


PREDS = ("p0", "p1", "p2")


def random_interval(rng: random.Random, unbounded_ok=True):
    a = rng.randint(0, 3)
    if unbounded_ok and rng.random() < 0.2:
        return a, None
    return a, a + rng.randint(0, 5)


def random_formula(rng: random.Random, depth: int, nnf: bool = False, preds=PREDS):
    """Random STL formula of nesting depth at most ``depth``.

    With ``nnf`` the only negations sit on predicates.
    """
    if depth <= 0 or rng.random() < 0.25:
        return Predicate(rng.choice(preds), nnf and rng.random() < 0.4)
    kinds = ["and", "or", "G", "F", "H", "O", "U", "S", "P"] + ([] if nnf else ["not"])
    kind = rng.choice(kinds)
    sub = lambda: random_formula(rng, depth - 1, nnf, preds)  # noqa: E731
    if kind == "not":
        return Not(sub())
    if kind in ("and", "or"):
        args = tuple(sub() for _ in range(rng.randint(2, 3)))
        return And(args) if kind == "and" else Or(args)
    if kind == "P":
        return Previous(sub())
    a, b = random_interval(rng)
    if kind in ("U", "S"):
        return (Until if kind == "U" else Since)(sub(), sub(), a, b)
    return {"G": Globally, "F": Eventually, "H": Historically, "O": Once}[kind](sub(), a, b)


def random_values(rng: random.Random, length: int, preds=PREDS):
    return {p: [rng.choice((-1, 1)) * rng.uniform(0.01, 1.0) for _ in range(length)] for p in preds}


# -- CNF encoding ---------------------------------------------------------------


def random_tree(rng, leaves):
    nodes = list(leaves)
    rng.shuffle(nodes)
    while len(nodes) > 1:
        k = rng.randint(2, min(3, len(nodes)))
        kids, nodes = nodes[:k], nodes[k:]
        node = (And if rng.random() < 0.5 else Or)(tuple(kids))
        nodes.insert(rng.randrange(len(nodes) + 1), node)
    return nodes[0]


def nested_truth(f, val):
    if isinstance(f, And):
        return all(nested_truth(c, val) for c in f.args)
    if isinstance(f, Or):
        return any(nested_truth(c, val) for c in f.args)
    return val[f]


def check_equisat(ar, truth_of):
    """Exhaustively: an original assignment extends to a CNF model iff truth_of holds."""
    n, m = ar.n_props, len(ar.tseitin_aux)
    aux = sorted(ar.tseitin_aux)
    cols = {v: i for i, v in enumerate(list(range(1, n + 1)) + aux)}
    grid = ((np.arange(2 ** (n + m))[:, None] >> np.arange(n + m)[None, :]) & 1).astype(bool)
    ok = np.ones(len(grid), dtype=bool)
    for c in ar.cnf:
        hit = np.zeros(len(grid), dtype=bool)
        for lit in c:
            col = grid[:, cols[abs(lit)]]
            hit |= col if lit > 0 else ~col
        ok &= hit
    orig_code = (grid[:, :n] * (1 << np.arange(n))).sum(axis=1)
    extendable = np.zeros(2 ** n, dtype=bool)
    np.logical_or.at(extendable, orig_code, ok)
    for code in range(2 ** n):
        a = {j + 1: bool(code >> j & 1) for j in range(n)}
        assert extendable[code] == bool(truth_of(a)), a


# -- SAT ----------------------------------------------------------------------


def random_cnf(rng: random.Random, max_vars: int = 15, max_clauses: int = 60):
    n = rng.randint(1, max_vars)
    m = rng.randint(1, min(max_clauses, max(1, int(5 * n))))
    clauses = []
    for _ in range(m):
        width = rng.randint(1, min(3, n))
        vs = rng.sample(range(1, n + 1), width)
        clauses.append(tuple(v if rng.random() < 0.5 else -v for v in vs))
    return n, clauses


def truth_table_sat(n: int, clauses) -> bool:
    rows = np.array(list(itertools.product((False, True), repeat=n)), dtype=bool) if n <= 12 else \
        ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    alive = np.ones(len(rows), dtype=bool)
    for c in clauses:
        hit = np.zeros(len(rows), dtype=bool)
        for lit in c:
            col = rows[:, abs(lit) - 1]
            hit |= col if lit > 0 else ~col
        alive &= hit
        if not alive.any():
            return False
    return True


def satisfies_partial(clauses, assignment) -> bool:
    for c in clauses:
        if not any(abs(l) in assignment and assignment[abs(l)] == (l > 0) for l in c):
            return False
    return True


# -- dynamics -----------------------------------------------------------------


def zoh(n_int: int, dt: float):
    """Exact discretisation of an n-th order integrator chain via the matrix exponential."""
    m = n_int + 1
    M = np.zeros((m, m))
    for i in range(n_int - 1):
        M[i, i + 1] = 1.0
    M[n_int - 1, n_int] = 1.0
    E = expm(M * dt)
    return E[:n_int, :n_int], E[:n_int, n_int]


# -- QP -----------------------------------------------------------------------


def projected_gradient_box_qp(P, q, lb, ub, iters=200_000, tol=1e-12):
    """min 1/2 z'Pz + q'z over a box, by projected gradient with 1/L steps."""
    L = max(np.linalg.eigvalsh(P).max(), 1e-12)
    z = np.clip(np.zeros(len(q)), lb, ub)
    for _ in range(iters):
        z_new = np.clip(z - (P @ z + q) / L, lb, ub)
        if np.max(np.abs(z_new - z)) < tol:
            z = z_new
            break
        z = z_new
    return z, float(0.5 * z @ P @ z + q @ z)


# -- time to comply -------------------------------------------------------------


def brake_kick_inputs(sc, k: int, sense: float):
    """Longitudinal inputs from step k minimising (sense=+1) or maximising (-1) summed position.

    States are explicit LP variables linked by equality constraints; the
    scenario's bounds are hard constraints.
    """
    A, B = zoh(4, sc.dt)
    n = sc.horizon - k
    x0 = sc.ego_trajectory.states[k]
    x0 = np.array([x0.s, x0.s_dot, x0.s_ddot, x0.s_dddot])
    nx = 4 * n
    nv = nx + n
    A_eq = np.zeros((nx, nv))
    b_eq = np.zeros(nx)
    for j in range(n):
        A_eq[4 * j:4 * j + 4, 4 * j:4 * j + 4] = np.eye(4)
        A_eq[4 * j:4 * j + 4, nx + j] = -B
        if j == 0:
            b_eq[0:4] = A @ x0
        else:
            A_eq[4 * j:4 * j + 4, 4 * (j - 1):4 * j] = -A
    sb, ib = sc.state_bounds, sc.input_bounds
    v_lo = max(sb.s_dot.lo, 0.0) if sc.forward_only else sb.s_dot.lo
    bounds = []
    for _ in range(n):
        bounds += [(None, None), (v_lo, sb.s_dot.hi), (sb.s_ddot.lo, sb.s_ddot.hi), (sb.s_dddot.lo, sb.s_dddot.hi)]
    bounds += [(ib.u_long.lo, ib.u_long.hi)] * n
    c = np.zeros(nv)
    c[0:nx:4] = sense
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return res.x[nx:]


def tc_scan(sc, rule, check):
    """Latest maneuver start over all steps whose splice passes ``check``."""
    from rulerepair.world_model import Input

    best = -INF
    lat = sc.ego_trajectory.inputs
    for k in range(sc.horizon):
        for sense in (1.0, -1.0):
            u = brake_kick_inputs(sc, k, sense)
            if u is None:
                continue
            inputs = [Input(float(a), b.u_lat) for a, b in zip(u, lat[k:])]
            if check(sc, inputs, k, rule):
                best = max(best, k)
    return best


# -- fuzzing ------------------------------------------------------------------


def fuzz(doc: dict, rng: np.random.Generator) -> dict:
    d = copy.deepcopy(doc)
    d["meta"] = {}
    e = d["ego"]["initial"]
    e["s_dot"] = max(0.5, e["s_dot"] * rng.uniform(0.85, 1.15))
    e["s"] += rng.uniform(-3, 3)
    if d["road"]["stop_lines"]:
        d["road"]["stop_lines"] = [d["road"]["stop_lines"][0] + rng.uniform(-4, 4)]
    for o in d["obstacles"]:
        ds, dv = rng.uniform(-4, 4), rng.uniform(-2, 2)
        for k, x in enumerate(o["states"]):
            x["s"] += ds + dv * d["dt"] * k
            x["s_dot"] += dv
    return d

"""Time-to-maneuver and the time-to-comply cut-off.

Each maneuver template is a small linear program over the remaining input
sequence of one integrator chain: full braking minimises the summed
position, kick-down maximises it, velocity hold minimises the summed
absolute acceleration and the steering variants minimise the summed
distance to a lateral target. All state and input bounds are constraints,
so every template is admissible by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from . import predicates as P
from .abstraction import AbstractionResult
from .stl import And, Formula, Not, eval_bool, to_nnf
from .world_model import (Input, Scenario, State, Trajectory, lateral_matrices, longitudinal_matrices)

NEG_INF = -math.inf
TTB, TTK, TTS_LEFT, TTS_RIGHT, TTMV = "TTB", "TTK", "TTS_left", "TTS_right", "TTMV"
KIND_ORDER = (TTB, TTK, TTS_LEFT, TTS_RIGHT, TTMV)
SERVES = {
    TTB: {P.LONG_POS, P.VELOCITY},
    TTK: {P.LONG_POS, P.VELOCITY},
    TTS_LEFT: {P.LAT_POS},
    TTS_RIGHT: {P.LAT_POS},
    TTMV: {P.ACCELERATION},
}
HEADING_CHANGE = 0.2
BOUND_TOL = 1e-7


class NoActionableProposition(Exception):
    def __init__(self, msg: str, fixed: dict[int, bool] | None = None):
        super().__init__(msg)
        # literals that no ego motion can realise, rejected on their own
        self.fixed = fixed or {}


@dataclass(frozen=True)
class Maneuver:
    kind: str

    def templates(self, sc: Scenario, k: int, base: Trajectory | None = None) -> list[list[Input]]:
        """Admissible input sequences for steps k..h-1 (one per variant)."""
        base = base or sc.ego_trajectory
        x = base.states[k]
        n = sc.horizon - k
        if n <= 0:
            return []
        kept = base.inputs[k:]
        if self.kind in (TTB, TTK, TTMV):
            u = _long_lp(sc, x, n, self.kind)
            if u is None:
                return []
            return [[Input(float(a), b.u_lat) for a, b in zip(u, kept)]]
        out = []
        sign = 1.0 if self.kind == TTS_LEFT else -1.0
        v_long = np.array([s.s_dot for s in base.states[k + 1:]])
        for variant in ("offset", "heading"):
            u = _lat_lp(sc, x, n, sign, variant, v_long)
            if u is not None:
                out.append([Input(b.u_long, float(a)) for a, b in zip(u, kept)])
        return out


@dataclass
class CutoffResult:
    tc: float
    maneuver_set: list[str]
    per_maneuver_ttm: dict[str, float]
    flipped_props: list[int]
    witness: dict[str, Trajectory] = field(default_factory=dict, repr=False)
    min_ttm: float = NEG_INF

    @property
    def k_cut(self) -> float:
        return self.tc


# -- condensed dynamics -----------------------------------------------------

@lru_cache(maxsize=64)
def _condensed(kind: str, dt: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Phi, Gamma with stacked states X[j] (j = 1..n) = Phi[j] x0 + Gamma[j] u."""
    A, B = longitudinal_matrices(dt) if kind == "long" else lateral_matrices(dt)
    m = A.shape[0]
    B = B.reshape(m, -1)
    phi = np.zeros((n, m, m))
    gam = np.zeros((n, m, n))
    powers = [np.eye(m)]
    for _ in range(n):
        powers.append(A @ powers[-1])
    for j in range(n):
        phi[j] = powers[j + 1]
        for i in range(j + 1):
            gam[j, :, i] = (powers[j - i] @ B)[:, 0]
    return phi, gam


def _long_lp(sc: Scenario, x: State, n: int, kind: str) -> np.ndarray | None:
    phi, gam = _condensed("long", sc.dt, n)
    x0 = x.longitudinal()
    free = phi @ x0  # (n, 4)
    sb, ib = sc.state_bounds, sc.input_bounds
    v_lo = max(sb.s_dot.lo, 0.0) if sc.forward_only else sb.s_dot.lo
    rows, rhs = [], []
    for comp, lo, hi in ((1, v_lo, sb.s_dot.hi), (2, sb.s_ddot.lo, sb.s_ddot.hi), (3, sb.s_dddot.lo, sb.s_dddot.hi)):
        G = gam[:, comp, :]
        f = free[:, comp]
        rows += [G, -G]
        rhs += [hi + BOUND_TOL - f, f - lo + BOUND_TOL]
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    bounds = [(ib.u_long.lo, ib.u_long.hi)] * n
    if kind == TTMV:
        # slack t_j >= |a_j|
        Ga = gam[:, 2, :]
        fa = free[:, 2]
        eye = np.eye(n)
        A_ub = np.vstack([np.hstack([A_ub, np.zeros((A_ub.shape[0], n))]),
                          np.hstack([Ga, -eye]), np.hstack([-Ga, -eye])])
        b_ub = np.concatenate([b_ub, -fa, fa])
        c = np.concatenate([np.zeros(n), np.ones(n)])
        bounds = bounds + [(0, None)] * n
    else:
        c = gam[:, 0, :].sum(axis=0)
        if kind == TTK:
            c = -c
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return np.clip(res.x[:n], ib.u_long.lo, ib.u_long.hi)


def _lat_lp(sc: Scenario, x: State, n: int, sign: float, variant: str, v_long: np.ndarray) -> np.ndarray | None:
    phi, gam = _condensed("lat", sc.dt, n)
    x0 = x.lateral()
    free = phi @ x0
    sb, ib = sc.state_bounds, sc.input_bounds
    G1, f1 = gam[:, 1, :], free[:, 1]
    A_ub = [G1, -G1]
    b_ub = [sb.d_dot.hi + BOUND_TOL - f1, f1 - sb.d_dot.lo + BOUND_TOL]
    if variant == "offset":
        width = sc.road.lane_width(x.s)
        target = np.full(n, x.d + sign * width)
        half_w = sc.ego_width / 2
        edge = target[0] + sign * half_w
        if edge > float(sc.road.road_left(x.s)) + 1e-9 or edge < float(sc.road.road_right(x.s)) - 1e-9:
            return None
        comp = 0
    else:
        theta = math.atan2(x.d_dot, max(x.s_dot, 1e-6)) + sign * HEADING_CHANGE
        target = np.clip(np.tan(theta) * v_long, sb.d_dot.lo, sb.d_dot.hi)
        comp = 1
    G, f = gam[:, comp, :], free[:, comp]
    eye = np.eye(n)
    A = np.vstack([np.hstack([np.vstack(A_ub), np.zeros((2 * n, n))]),
                   np.hstack([G, -eye]), np.hstack([-G, -eye])])
    b = np.concatenate(b_ub + [target - f, f - target])
    c = np.concatenate([np.zeros(n), np.ones(n)])
    bounds = [(ib.u_lat.lo, ib.u_lat.hi)] * n + [(0, None)] * n
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return np.clip(res.x[:n], ib.u_lat.lo, ib.u_lat.hi)


# -- selection --------------------------------------------------------------

def trace_valuation(ar: AbstractionResult, sig, tv: int) -> dict[int, bool]:
    return {p.index: eval_bool(p.subformula, sig, tv) for p in ar.propositions}


def select_maneuvers(valuation, ar: AbstractionResult, trace_at_tv: dict[int, bool]) -> tuple[list[int], list[str]]:
    """Flipped actionable propositions and the maneuver kinds that can act on them."""
    assignments = getattr(valuation, "assignments", valuation)
    flipped = [j for j, v in sorted(assignments.items())
               if j <= ar.n_props and trace_at_tv.get(j) != v]
    # a proposition over environment-only predicates keeps its trace value
    # whatever the ego does
    fixed = [j for j in flipped if ar.proposition(j).predicate_categories <= {P.UNCATEGORIZED}]
    if fixed:
        raise NoActionableProposition(f"flipped {fixed} do not depend on the ego motion",
                                      {j: assignments[j] for j in fixed})
    actionable = [j for j in flipped if not ar.proposition(j).contains_past_only]
    kinds = [m for m in KIND_ORDER
             if any(SERVES[m] & ar.proposition(j).predicate_categories for j in actionable)]
    if not actionable or not kinds:
        raise NoActionableProposition(f"flipped {flipped}, none actionable")
    return actionable, kinds


def requirement(ar: AbstractionResult, valuation, props: list[int]) -> Formula:
    assignments = getattr(valuation, "assignments", valuation)
    parts = []
    for j in props:
        f = ar.proposition(j).subformula
        parts.append(f if assignments[j] else to_nnf(Not(f)))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def splice(sc: Scenario, k: int, inputs: list[Input], base: Trajectory | None = None) -> Trajectory:
    base = base or sc.ego_trajectory
    return Trajectory.from_inputs(base.states[0], list(base.inputs[:k]) + list(inputs), sc.dt)


def complies(sc: Scenario, traj: Trajectory, req: Formula, tv: int, start: int = 0) -> bool:
    cand = sc.with_trajectory(traj)
    states = traj.states
    if any(k >= start for k in P.collision_steps(cand, states)):
        return False
    if P.off_road_steps(cand, states, start):
        return False
    return eval_bool(req, P.TraceSignal(cand), min(tv, sc.horizon))


def time_to_maneuver(sc: Scenario, maneuver: Maneuver, req: Formula, tv: int,
                     base: Trajectory | None = None) -> tuple[float, Trajectory | None]:
    """Latest start k <= tv of the maneuver whose spliced trajectory meets req."""
    base = base or sc.ego_trajectory
    if tv == math.inf:
        tv = sc.horizon
    tv = int(tv)
    if complies(sc, base, req, tv, 0):
        return tv, base
    for k in range(min(tv, sc.horizon - 1), -1, -1):
        for inputs in maneuver.templates(sc, k, base):
            traj = splice(sc, k, inputs, base)
            if complies(sc, traj, req, tv, k):
                return k, traj
    return NEG_INF, None


def time_to_comply(sc: Scenario, valuation, ar: AbstractionResult, tv: int,
                   trace_at_tv: dict[int, bool] | None = None) -> CutoffResult:
    if trace_at_tv is None:
        trace_at_tv = trace_valuation(ar, P.TraceSignal(sc), int(tv))
    props, kinds = select_maneuvers(valuation, ar, trace_at_tv)
    ttm: dict[str, float] = {}
    witness: dict[str, Trajectory] = {}
    for kind in kinds:
        served = [j for j in props if SERVES[kind] & ar.proposition(j).predicate_categories]
        k, traj = time_to_maneuver(sc, Maneuver(kind), requirement(ar, valuation, served), tv)
        ttm[kind] = k
        if traj is not None:
            witness[kind] = traj
    tc = max(ttm.values(), default=NEG_INF)
    finite = [v for v in ttm.values() if v != NEG_INF]
    return CutoffResult(tc, kinds, ttm, props, witness, min(finite) if finite else NEG_INF)

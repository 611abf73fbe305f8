"""Corridor-constrained trajectory optimisation and verified splicing.

Longitudinal and lateral motion are two independent quadratic programs.
Decision vector per chain: states x_1..x_n followed by inputs u_0..u_{n-1};
x_0 is the cut-off state. Dynamics are equality constraints from the exact
zero-order-hold matrices, the corridor boxes and the state/input bounds are
variable bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from . import predicates as P
from .reach import Corridor
from .stl import Formula, Monitor
from .world_model import (Input, Scenario, Trajectory, check_trajectory, lateral_matrices,
                          longitudinal_matrices, rollout)

MAX_ITER = 10_000
SHRINK = 2e-3
# maneuver templates meet the bounds up to the LP feasibility tolerance
BOUND_SLACK = 1e-7
GUIDE_TOL = 1e-6


class NumericalBreakdown(RuntimeError):
    pass


@dataclass(frozen=True)
class Weights:
    w_jerk: float = 1.0
    w_acc: float = 0.5
    w_dev: float = 0.1
    w_input: float = 1e-4


@dataclass
class QuadProgram:
    """minimize 1/2 z'Pz + q'z  s.t.  A_eq z = b_eq,  G z <= g,  lb <= z <= ub."""
    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    G: np.ndarray | None = None
    g: np.ndarray | None = None
    const: float = 0.0

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z + self.const)

    def constraint_report(self) -> dict:
        finite = int(np.isfinite(self.lb).sum() + np.isfinite(self.ub).sum())
        return {"variables": self.n, "equalities": len(self.b_eq), "bounds": finite,
                "inequalities": 0 if self.g is None else len(self.g)}


@dataclass
class QPResult:
    status: str  # "solved" | "infeasible"
    z: np.ndarray | None = None
    objective: float = math.nan
    iterations: int = 0


@dataclass
class QPProblem:
    k_cut: int
    n: int
    longitudinal: QuadProgram
    lateral: QuadProgram
    meta: dict = field(default_factory=dict)

    def constraint_report(self) -> dict:
        a, b = self.longitudinal.constraint_report(), self.lateral.constraint_report()
        return {k: a[k] + b[k] for k in a}


@dataclass
class Segment:
    k_cut: int
    inputs: list[Input]
    states_long: np.ndarray
    states_lat: np.ndarray
    objective: float


@dataclass
class SpliceResult:
    ok: bool
    trajectory: Trajectory
    reason: str = ""
    tv: float = math.inf


def solve_quadprog(qp: QuadProgram, max_iter: int = MAX_ITER, tol: float = 1e-8) -> QPResult:
    n = qp.n
    rows = [qp.A_eq]
    rhs = [qp.b_eq]
    n_eq = len(qp.b_eq)
    ineq_rows, ineq_rhs = [], []
    if qp.G is not None and len(qp.g):
        ineq_rows.append(qp.G)
        ineq_rhs.append(qp.g)
    eye = np.eye(n)
    fin_u = np.isfinite(qp.ub)
    fin_l = np.isfinite(qp.lb)
    if fin_u.any():
        ineq_rows.append(eye[fin_u])
        ineq_rhs.append(qp.ub[fin_u])
    if fin_l.any():
        ineq_rows.append(-eye[fin_l])
        ineq_rhs.append(-qp.lb[fin_l])
    if np.any(qp.lb > qp.ub):
        return QPResult("infeasible")
    rows += ineq_rows
    rhs += ineq_rhs
    A = sparse.csc_matrix(np.vstack(rows)) if rows else sparse.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    n_in = len(b) - n_eq
    cones = []
    if n_eq:
        cones.append(clarabel.ZeroConeT(n_eq))
    if n_in:
        cones.append(clarabel.NonnegativeConeT(n_in))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    Pu = sparse.triu(sparse.csc_matrix(qp.P), format="csc")
    solver = clarabel.DefaultSolver(Pu, np.asarray(qp.q, dtype=float), A, b, cones, settings)
    sol = solver.solve()
    st = sol.status
    S = clarabel.SolverStatus
    if st in (S.PrimalInfeasible, S.DualInfeasible, S.AlmostPrimalInfeasible, S.AlmostDualInfeasible):
        return QPResult("infeasible", iterations=sol.iterations)
    if st not in (S.Solved, S.AlmostSolved):
        raise NumericalBreakdown(f"solver stopped with {st} after {sol.iterations} iterations")
    z = np.array(sol.x)
    return QPResult("solved", z, qp.objective(z), sol.iterations)


def _shrink(lo: float, hi: float, keep: float | None = None, margin: float = SHRINK) -> tuple[float, float]:
    """Pull a bound pair inward by margin, but never past keep when it lies inside."""
    if hi - lo <= 4 * margin:
        a, b = lo, hi
    else:
        a, b = lo + margin, hi - margin
    if keep is not None and lo - GUIDE_TOL <= keep <= hi + GUIDE_TOL:
        a, b = min(a, keep), max(b, keep)
    return a, b


def _chain_qp(A: np.ndarray, B: np.ndarray, x0: np.ndarray, n: int, Q: np.ndarray, R: float,
              ref: np.ndarray | None, ref_weight: float, ref_comp: int,
              x_lb: np.ndarray, x_ub: np.ndarray, u_lb: float, u_ub: float) -> QuadProgram:
    m = A.shape[0]
    B = B.reshape(m)
    nx = n * m
    nz = nx + n
    # dynamics: x_{j+1} - A x_j - B u_j = 0, x_0 fixed
    A_eq = np.zeros((nx, nz))
    b_eq = np.zeros(nx)
    for j in range(n):
        r = slice(j * m, (j + 1) * m)
        A_eq[r, j * m:(j + 1) * m] = np.eye(m)
        if j == 0:
            b_eq[r] = A @ x0
        else:
            A_eq[r, (j - 1) * m:j * m] = -A
        A_eq[r, nx + j] = -B
    Pm = np.zeros((nz, nz))
    q = np.zeros(nz)
    const = 0.0
    for j in range(n):
        Pm[j * m:(j + 1) * m, j * m:(j + 1) * m] += 2 * Q
        if ref is not None and ref_weight > 0:
            i = j * m + ref_comp
            Pm[i, i] += 2 * ref_weight
            q[i] += -2 * ref_weight * ref[j]
            const += ref_weight * ref[j] ** 2
    Pm[nx:, nx:] += 2 * R * np.eye(n)
    lb = np.concatenate([x_lb.reshape(-1), np.full(n, u_lb)])
    ub = np.concatenate([x_ub.reshape(-1), np.full(n, u_ub)])
    return QuadProgram(Pm, q, A_eq, b_eq, lb, ub, const=const)


def build_qp(sc: Scenario, corridor: Corridor, k_cut: int, weights: Weights = Weights(),
             base: Trajectory | None = None, guide: Trajectory | None = None) -> QPProblem:
    base = base or sc.ego_trajectory
    h = sc.horizon
    n = h - k_cut
    if n < 1:
        raise ValueError("nothing to optimise after the cut-off step")
    if corridor.k_cut != k_cut or len(corridor.boxes) != n + 1:
        raise ValueError("corridor does not cover [k_cut, h]")
    x0 = base.states[k_cut]
    sb, ib = sc.state_bounds, sc.input_bounds
    v_floor = max(sb.s_dot.lo, 0.0) if sc.forward_only else sb.s_dot.lo
    inf = math.inf

    lo_l = np.empty((n, 4))
    hi_l = np.empty((n, 4))
    lo_t = np.empty((n, 2))
    hi_t = np.empty((n, 2))
    for j in range(n):
        s_lo, s_hi, v_lo, v_hi, d_lo, d_hi = corridor.boxes[j + 1]
        g = guide.states[k_cut + j + 1] if guide is not None else None
        s_lo, s_hi = _shrink(s_lo, s_hi, g and g.s)
        v_lo, v_hi = _shrink(max(v_lo, v_floor), min(v_hi, sb.s_dot.hi), g and g.s_dot)
        d_lo, d_hi = _shrink(d_lo, d_hi, g and g.d)
        e = BOUND_SLACK
        lo_l[j] = (s_lo, v_lo, sb.s_ddot.lo - e, sb.s_dddot.lo - e)
        hi_l[j] = (s_hi, v_hi, sb.s_ddot.hi + e, sb.s_dddot.hi + e)
        lo_t[j] = (d_lo, sb.d_dot.lo - e)
        hi_t[j] = (d_hi, sb.d_dot.hi + e)
    A, B = longitudinal_matrices(sc.dt)
    Q = np.diag([0.0, 0.0, weights.w_acc, weights.w_jerk])
    s_ref = np.array([x.s for x in base.states[k_cut + 1:]])
    long_qp = _chain_qp(A, B, x0.longitudinal(), n, Q, weights.w_input, s_ref, weights.w_dev, 0,
                        lo_l, hi_l, ib.u_long.lo, ib.u_long.hi)
    Al, Bl = lateral_matrices(sc.dt)
    Ql = np.diag([0.0, weights.w_acc * 0.1])
    d_ref = np.array([x.d for x in base.states[k_cut + 1:]])
    lat_qp = _chain_qp(Al, Bl, x0.lateral(), n, Ql, weights.w_acc, d_ref, weights.w_dev, 0,
                       lo_t, hi_t, ib.u_lat.lo, ib.u_lat.hi)
    return QPProblem(k_cut, n, long_qp, lat_qp, {"inf": inf})


def solve_qp(qp: QPProblem) -> Segment | None:
    """Optimal inputs for [k_cut, h-1], or None when either chain is infeasible."""
    rl = solve_quadprog(qp.longitudinal)
    if rl.status != "solved":
        return None
    rt = solve_quadprog(qp.lateral)
    if rt.status != "solved":
        return None
    n = qp.n
    u_long = rl.z[4 * n:]
    u_lat = rt.z[2 * n:]
    inputs = [Input(float(a), float(b)) for a, b in zip(u_long, u_lat)]
    return Segment(qp.k_cut, inputs, rl.z[:4 * n].reshape(n, 4), rt.z[:2 * n].reshape(n, 2),
                   rl.objective + rt.objective)


def splice_and_verify(sc: Scenario, segment, k_cut: int, rule: Formula,
                      base: Trajectory | None = None, tol: float = 1e-6) -> SpliceResult:
    """Prefix of the initial trajectory up to k_cut, then the segment's inputs.

    The result is returned as compliant only if the monitor reports no
    violation, there is no collision and all bounds hold.
    """
    base = base or sc.ego_trajectory
    inputs = segment.inputs if isinstance(segment, Segment) else list(segment)
    ib = sc.input_bounds
    inputs = [Input(min(max(u.u_long, ib.u_long.lo), ib.u_long.hi), min(max(u.u_lat, ib.u_lat.lo), ib.u_lat.hi))
              for u in inputs]
    tail = rollout(base.states[k_cut], inputs, sc.dt)
    states = tuple(base.states[:k_cut + 1]) + tuple(tail[1:])
    traj = Trajectory(states, tuple(base.inputs[:k_cut]) + tuple(inputs))
    if len(states) != sc.horizon + 1:
        return SpliceResult(False, traj, "length mismatch")
    problems = check_trajectory(traj, sc.dt, tol)
    if problems:
        return SpliceResult(False, traj, "; ".join(problems))
    for k in range(k_cut + 1, len(states)):
        bad = sc.state_bounds.violations(states[k], tol)
        if sc.forward_only and states[k].s_dot < -tol:
            bad.append("s_dot < 0")
        if bad:
            return SpliceResult(False, traj, f"state bounds at step {k}: {', '.join(bad)}")
    cand = sc.with_trajectory(traj)
    hits = [k for k in P.collision_steps(cand, states) if k > k_cut]
    if hits:
        return SpliceResult(False, traj, f"collision at steps {hits}")
    off = P.off_road_steps(cand, states, k_cut + 1)
    if off:
        return SpliceResult(False, traj, f"off road at steps {off}")
    tv = Monitor(P.TraceSignal(cand)).tv(rule, 0)
    if tv != math.inf:
        return SpliceResult(False, traj, f"rule violated at step {tv}", tv)
    return SpliceResult(True, traj)

"""Specification-compliant reachable sets and driving corridors.

A reachable set at step tau is a list of axis-aligned boxes in (s, s_dot, d).
Each box also carries intervals for acceleration, jerk and lateral speed
so the forward images of both integrator chains stay sound. Forward images
are computed with interval arithmetic over the exact zero-order-hold
update, rounded outward to a fixed grid, then intersected (exactly, not
re-gridded) with the state bounds, the road, the collision-free space and
the per-step projections of the propositions assigned true.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import predicates as P
from .abstraction import AbstractionResult
from .stl import And, Formula, Globally, Predicate, eval_bool
from .world_model import Scenario, Trajectory

# column layout of the internal box arrays
S_LO, S_HI, V_LO, V_HI, A_LO, A_HI, J_LO, J_HI, D_LO, D_HI, E_LO, E_HI = range(12)  # E: d_dot
_PUBLIC = [S_LO, S_HI, V_LO, V_HI, D_LO, D_HI]


class ProjectionUnavailable(Exception):
    def __init__(self, prop: int, reason: str):
        super().__init__(f"s{prop}: {reason}")
        self.prop = prop


class NoConnectedCorridor(Exception):
    pass


@dataclass(frozen=True)
class Cell:
    s_lo: float
    s_hi: float
    sdot_lo: float
    sdot_hi: float
    d_lo: float
    d_hi: float

    def contains(self, s: float, v: float, d: float, tol: float = 1e-9) -> bool:
        return (self.s_lo - tol <= s <= self.s_hi + tol and self.sdot_lo - tol <= v <= self.sdot_hi + tol
                and self.d_lo - tol <= d <= self.d_hi + tol)

    def log_area(self, floor: float = 1e-3) -> float:
        return sum(math.log(max(hi - lo, floor)) for lo, hi in
                   ((self.s_lo, self.s_hi), (self.sdot_lo, self.sdot_hi), (self.d_lo, self.d_hi)))


@dataclass(frozen=True)
class Grid:
    s: float = 0.5
    v: float = 0.5
    d: float = 0.25
    max_cells: int = 32


@dataclass
class ReachSet:
    k_cut: int
    steps: list[np.ndarray]  # per step, (m, 12) box array
    parents: list[list[frozenset[int]]]
    constraint_log: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.k_cut + len(self.steps) - 1

    def cells(self, tau: int) -> list[Cell]:
        arr = self.steps[tau - self.k_cut]
        return [Cell(*map(float, row[_PUBLIC])) for row in arr]

    def contains(self, tau: int, s: float, v: float, d: float, tol: float = 1e-9) -> bool:
        arr = self.steps[tau - self.k_cut]
        ok = ((arr[:, S_LO] - tol <= s) & (s <= arr[:, S_HI] + tol) & (arr[:, V_LO] - tol <= v)
              & (v <= arr[:, V_HI] + tol) & (arr[:, D_LO] - tol <= d) & (d <= arr[:, D_HI] + tol))
        return bool(ok.any())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "s_lo", "s_hi", "sdot_lo", "sdot_hi", "d_lo", "d_hi"])
        for i, arr in enumerate(self.steps):
            for row in arr:
                w.writerow([self.k_cut + i] + [f"{float(v):.6g}" for v in row[_PUBLIC]])
        return buf.getvalue()


@dataclass(frozen=True)
class Empty:
    at_step: int
    constraint_log: tuple = ()


@dataclass(frozen=True)
class Corridor:
    k_cut: int
    boxes: tuple[tuple[float, float, float, float, float, float], ...]
    score: float = 0.0

    def at(self, tau: int):
        return self.boxes[tau - self.k_cut]


# -- constraints ------------------------------------------------------------

@dataclass
class _StepConstraint:
    """Per-step region from one proposition, applied on [start, h]."""
    prop: int
    pred_id: str
    polarity: bool
    start: int


def _literal(f: Formula):
    if isinstance(f, Predicate):
        return f.id, not f.negated
    return None


def _per_step_literals(f: Formula, offset: int = 0):
    """Literals a G-scoped unit forces at every step from offset on, or None."""
    lit = _literal(f)
    if lit is not None:
        return [(lit[0], lit[1], offset)]
    if isinstance(f, And):
        out = []
        for c in f.args:
            sub = _per_step_literals(c, offset)
            if sub is None:
                return None
            out += sub
        return out
    if isinstance(f, Globally):
        # G[a,b] under G: on [TV, h] the windows clip at h, so the literal
        # must hold on every step from TV + a.
        return _per_step_literals(f.arg, offset + f.a)
    return None


def plan_constraints(sc: Scenario, valuation, ar: AbstractionResult, tv: int,
                     log: list | None = None) -> list[_StepConstraint]:
    assignments = getattr(valuation, "assignments", valuation)
    out = []
    sig = None
    for j, value in sorted(assignments.items()):
        if j > ar.n_props:
            continue
        prop = ar.proposition(j)
        if not value:
            if log is not None:
                log.append((tv, f"s{j}", "false: no per-step constraint"))
            continue
        f = prop.subformula
        lits = _per_step_literals(f.arg) if isinstance(f, Globally) and f.a == 0 and f.b is None else None
        projectable = lits is not None and all(P.get(pid).projector is not None for pid, _, _ in lits)
        if not projectable:
            if sig is None:
                sig = P.TraceSignal(sc)
            if eval_bool(f, sig, min(tv, sc.horizon)):
                if log is not None:
                    log.append((tv, f"s{j}", "not projectable, holds on the initial trajectory: checked at verification"))
                continue
            raise ProjectionUnavailable(j, "no per-step projection")
        for pid, pol, off in lits:
            out.append(_StepConstraint(j, pid, pol, tv + off))
    return out


# -- box operations ---------------------------------------------------------

def _snap_out(arr: np.ndarray, grid: Grid) -> np.ndarray:
    out = arr.copy()
    for lo, hi, g in ((S_LO, S_HI, grid.s), (V_LO, V_HI, grid.v), (D_LO, D_HI, grid.d)):
        out[:, lo] = np.floor(out[:, lo] / g + 1e-9) * g
        out[:, hi] = np.ceil(out[:, hi] / g - 1e-9) * g
    return out


def _forward(arr: np.ndarray, sc: Scenario, k: int) -> np.ndarray:
    dt = sc.dt
    ib = sc.input_bounds.at(k)
    u_lo, u_hi = ib.u_long.lo, ib.u_long.hi
    out = np.empty_like(arr)
    c = (dt, dt ** 2 / 2, dt ** 3 / 6, dt ** 4 / 24)
    s_lo, s_hi = arr[:, S_LO], arr[:, S_HI]
    v_lo, v_hi = arr[:, V_LO], arr[:, V_HI]
    a_lo, a_hi = arr[:, A_LO], arr[:, A_HI]
    j_lo, j_hi = arr[:, J_LO], arr[:, J_HI]
    out[:, S_LO] = s_lo + v_lo * c[0] + a_lo * c[1] + j_lo * c[2] + u_lo * c[3]
    out[:, S_HI] = s_hi + v_hi * c[0] + a_hi * c[1] + j_hi * c[2] + u_hi * c[3]
    out[:, V_LO] = v_lo + a_lo * c[0] + j_lo * c[1] + u_lo * c[2]
    out[:, V_HI] = v_hi + a_hi * c[0] + j_hi * c[1] + u_hi * c[2]
    out[:, A_LO] = a_lo + j_lo * c[0] + u_lo * c[1]
    out[:, A_HI] = a_hi + j_hi * c[0] + u_hi * c[1]
    out[:, J_LO] = j_lo + u_lo * dt
    out[:, J_HI] = j_hi + u_hi * dt
    w_lo, w_hi = ib.u_lat.lo, ib.u_lat.hi
    out[:, D_LO] = arr[:, D_LO] + arr[:, E_LO] * dt + w_lo * c[1]
    out[:, D_HI] = arr[:, D_HI] + arr[:, E_HI] * dt + w_hi * c[1]
    out[:, E_LO] = arr[:, E_LO] + w_lo * dt
    out[:, E_HI] = arr[:, E_HI] + w_hi * dt
    return out


def _clip(arr: np.ndarray, col_lo: int, col_hi: int, lo: float, hi: float) -> np.ndarray:
    arr = arr.copy()
    arr[:, col_lo] = np.maximum(arr[:, col_lo], lo)
    arr[:, col_hi] = np.minimum(arr[:, col_hi], hi)
    return arr


def _valid(arr: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return ((arr[:, S_LO] <= arr[:, S_HI] + tol) & (arr[:, V_LO] <= arr[:, V_HI] + tol)
            & (arr[:, A_LO] <= arr[:, A_HI] + tol) & (arr[:, J_LO] <= arr[:, J_HI] + tol)
            & (arr[:, D_LO] <= arr[:, D_HI] + tol) & (arr[:, E_LO] <= arr[:, E_HI] + tol))


def _intersect_region(arr: np.ndarray, parents: list[frozenset], region: P.Region):
    if not region.boxes or len(arr) == 0:
        return arr[:0], []
    reg = np.array(region.boxes, dtype=float)  # (r, 6)
    m, r = len(arr), len(reg)
    out = np.repeat(arr, r, axis=0)
    rr = np.tile(reg, (m, 1))
    for (lo, hi), (rlo, rhi) in zip(((S_LO, S_HI), (V_LO, V_HI), (D_LO, D_HI)), ((0, 1), (2, 3), (4, 5))):
        out[:, lo] = np.maximum(out[:, lo], rr[:, rlo])
        out[:, hi] = np.minimum(out[:, hi], rr[:, rhi])
    keep = _valid(out)
    idx = np.repeat(np.arange(m), r)[keep]
    return out[keep], [parents[i] for i in idx]


def _remove_collisions(arr: np.ndarray, parents: list[frozenset], forbidden):
    for (fs_lo, fs_hi, fd_lo, fd_hi) in forbidden:
        hit = ((arr[:, S_LO] < fs_hi) & (arr[:, S_HI] > fs_lo) & (arr[:, D_LO] < fd_hi) & (arr[:, D_HI] > fd_lo))
        if not hit.any():
            continue
        keep_rows = [arr[~hit]]
        keep_par = [p for p, h in zip(parents, hit) if not h]
        sub = arr[hit]
        sub_par = [p for p, h in zip(parents, hit) if h]
        inf = math.inf
        pieces = P.Region((
            (-inf, fs_lo, -inf, inf, -inf, inf), (fs_hi, inf, -inf, inf, -inf, inf),
            (-inf, inf, -inf, inf, -inf, fd_lo), (-inf, inf, -inf, inf, fd_hi, inf),
        ))
        cut, cut_par = _intersect_region(sub, sub_par, pieces)
        keep_rows.append(cut)
        keep_par += cut_par
        arr = np.vstack(keep_rows)
        parents = keep_par
    return arr, parents


def _prune(arr: np.ndarray, parents: list[frozenset], grid: Grid):
    """Drop duplicates and contained boxes, then merge down to grid.max_cells."""
    if len(arr) == 0:
        return arr, parents
    order = np.lexsort(arr.T[::-1])
    arr = arr[order]
    parents = [parents[i] for i in order]
    lo_cols = [S_LO, V_LO, A_LO, J_LO, D_LO, E_LO]
    hi_cols = [S_HI, V_HI, A_HI, J_HI, D_HI, E_HI]
    keep = np.ones(len(arr), dtype=bool)
    pars = list(parents)
    for i in range(len(arr)):
        if not keep[i]:
            continue
        inside = np.all(arr[:, lo_cols] <= arr[i, lo_cols] + 1e-12, axis=1) & \
            np.all(arr[:, hi_cols] >= arr[i, hi_cols] - 1e-12, axis=1) & keep
        inside[i] = False
        js = np.flatnonzero(inside)
        if js.size:
            j = js[0]
            pars[j] = pars[j] | pars[i]
            keep[i] = False
    arr = arr[keep]
    pars = [p for p, k in zip(pars, keep) if k]
    while len(arr) > grid.max_cells:
        arr, pars = _merge_once(arr, pars)
    return arr, pars


def _volume(arr):
    w = np.maximum(arr[..., [S_HI, V_HI, D_HI]] - arr[..., [S_LO, V_LO, D_LO]], 1e-3)
    return np.prod(w, axis=-1)


def _hull(a, b):
    out = np.minimum(a, b)
    for hi in (S_HI, V_HI, A_HI, J_HI, D_HI, E_HI):
        out[..., hi] = np.maximum(a[..., hi], b[..., hi])
    return out


def _merge_once(arr, pars):
    m = len(arr)
    a = arr[:, None, :]
    b = arr[None, :, :]
    hull = _hull(np.broadcast_to(a, (m, m, arr.shape[1])), np.broadcast_to(b, (m, m, arr.shape[1])))
    vol = _volume(arr)
    cost = _volume(hull) - np.maximum(vol[:, None], vol[None, :])
    cost[np.diag_indices(m)] = np.inf
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    i, j = min(i, j), max(i, j)
    merged = _hull(arr[i], arr[j])
    keep = [x for x in range(m) if x not in (i, j)]
    new_arr = np.vstack([arr[keep], merged[None, :]])
    new_pars = [pars[x] for x in keep] + [pars[i] | pars[j]]
    return new_arr, new_pars


# -- main entry -------------------------------------------------------------

def initial_box(x) -> np.ndarray:
    return np.array([[x.s, x.s, x.s_dot, x.s_dot, x.s_ddot, x.s_ddot, x.s_dddot, x.s_dddot,
                      x.d, x.d, x.d_dot, x.d_dot]])


def compute_reach(sc: Scenario, k_cut: int, valuation=None, ar: AbstractionResult | None = None,
                  tv: int | None = None, grid: Grid = Grid(), base: Trajectory | None = None,
                  constraints: Sequence[_StepConstraint] | None = None,
                  collision: bool = True) -> ReachSet | Empty:
    """Reachable boxes on [k_cut, h] from the cut-off state of the initial trajectory."""
    base = base or sc.ego_trajectory
    h = sc.horizon
    if not 0 <= k_cut <= h:
        raise ValueError(f"k_cut {k_cut} outside [0, {h}]")
    log: list = []
    if constraints is None:
        if valuation is not None and ar is not None:
            constraints = plan_constraints(sc, valuation, ar, h if tv is None or tv == math.inf else int(tv), log)
        else:
            constraints = []
    arr = initial_box(base.states[k_cut])
    steps = [arr]
    parents: list[list[frozenset]] = [[frozenset()]]
    half_w = sc.ego_width / 2
    road_hi = sc.road.road_left.upper() - half_w
    road_lo = sc.road.road_right.lower() + half_w
    for tau in range(k_cut + 1, h + 1):
        nxt = _snap_out(_forward(arr, sc, tau - 1), grid)
        par = [frozenset([i]) for i in range(len(nxt))]
        sb = sc.state_bounds.at(tau)
        v_lo = max(sb.s_dot.lo, 0.0) if sc.forward_only else sb.s_dot.lo
        nxt = _clip(nxt, V_LO, V_HI, v_lo, sb.s_dot.hi)
        nxt = _clip(nxt, A_LO, A_HI, sb.s_ddot.lo, sb.s_ddot.hi)
        nxt = _clip(nxt, J_LO, J_HI, sb.s_dddot.lo, sb.s_dddot.hi)
        nxt = _clip(nxt, E_LO, E_HI, sb.d_dot.lo, sb.d_dot.hi)
        nxt = _clip(nxt, D_LO, D_HI, road_lo, road_hi)
        ok = _valid(nxt)
        nxt, par = nxt[ok], [p for p, o in zip(par, ok) if o]
        if collision:
            nxt, par = _remove_collisions(nxt, par, P.forbidden_boxes(sc, tau))
        for c in constraints:
            if tau < c.start or len(nxt) == 0:
                continue
            region = P.project_predicate(c.pred_id, sc, tau, c.polarity)
            nxt, par = _intersect_region(nxt, par, region)
            log.append((tau, f"s{c.prop}", f"{'' if c.polarity else '!'}{c.pred_id}"))
        if len(nxt) == 0:
            return Empty(tau, tuple(log))
        nxt, par = _prune(nxt, par, grid)
        steps.append(nxt)
        parents.append(par)
        arr = nxt
    return ReachSet(k_cut, steps, parents, log)


GUIDE_BONUS = 1e3
GUIDE_TOL = 1e-6


def extract_corridors(rs: ReachSet, n: int = 1, guide: Trajectory | None = None) -> list[Corridor]:
    """Up to n box sequences of maximal summed log-area, best first.

    With a guide trajectory every box containing the guide state at its step
    earns a large bonus, so the best corridor follows the guide wherever the
    reachable set contains it. Boxes alone lose the coupling between speed,
    acceleration and jerk; a guide that is known to be feasible keeps the
    optimisation problem feasible.
    """
    scores: list[np.ndarray] = []
    back: list[np.ndarray] = []
    for t, arr in enumerate(rs.steps):
        la = np.array([Cell(*map(float, row[_PUBLIC])).log_area() for row in arr])
        if guide is not None:
            x = guide.states[rs.k_cut + t]
            e = GUIDE_TOL
            inside = ((arr[:, S_LO] - e <= x.s) & (x.s <= arr[:, S_HI] + e) & (arr[:, V_LO] - e <= x.s_dot)
                      & (x.s_dot <= arr[:, V_HI] + e) & (arr[:, D_LO] - e <= x.d) & (x.d <= arr[:, D_HI] + e))
            la = la + GUIDE_BONUS * inside
        if t == 0:
            scores.append(np.zeros(len(arr)))
            back.append(np.full(len(arr), -1))
            continue
        prev, prev_arr = scores[-1], rs.steps[t - 1]
        sc_row = np.full(len(arr), -np.inf)
        bk = np.full(len(arr), -1)
        for i, ps in enumerate(rs.parents[t]):
            best = None
            for p in sorted(ps):
                if not np.isfinite(prev[p]):
                    continue
                key = (prev[p], prev_arr[p, S_HI])
                if best is None or key > best[0]:
                    best = (key, p)
            if best is not None:
                sc_row[i] = best[0][0] + la[i]
                bk[i] = best[1]
        scores.append(sc_row)
        back.append(bk)
    last = rs.steps[-1]
    finals = [i for i in range(len(last)) if np.isfinite(scores[-1][i])]
    if not finals:
        raise NoConnectedCorridor("no box sequence spans the horizon")
    finals.sort(key=lambda i: (scores[-1][i], last[i, S_HI]), reverse=True)
    out = []
    for i in finals[:n]:
        path = [i]
        for t in range(len(rs.steps) - 1, 0, -1):
            path.append(int(back[t][path[-1]]))
        path.reverse()
        boxes = tuple(tuple(float(v) for v in rs.steps[t][b, _PUBLIC]) for t, b in enumerate(path))
        out.append(Corridor(rs.k_cut, boxes, float(scores[-1][i])))
    return out


def extract_corridor(rs: ReachSet) -> Corridor:
    return extract_corridors(rs, 1)[0]


def corridor_contains(cor: Corridor, traj: Trajectory, tol: float = 1e-6) -> bool:
    for tau in range(cor.k_cut, cor.k_cut + len(cor.boxes)):
        x = traj.states[tau]
        b = cor.at(tau)
        if not (b[0] - tol <= x.s <= b[1] + tol and b[2] - tol <= x.s_dot <= b[3] + tol and b[4] - tol <= x.d <= b[5] + tol):
            return False
    return True

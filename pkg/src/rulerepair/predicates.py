"""Traffic-rule predicates and the bundled rule library.

Every predicate is an evaluation function alpha whose sign is the truth
value: ``margin > 0`` means the predicate holds. Margins are computed with
numpy operations so the same code evaluates a single ``State`` or a batch
of sampled states (any object with array attributes ``s``, ``s_dot``,
``s_ddot``, ``d``, ``d_dot``).

Ego-obstacle predicates are bound to the scenario's rule obstacle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .stl import Formula, parse
from .stl.semantics import EPS
from .world_model import Obstacle, Scenario, State, extrapolate

LONG_POS = "longitudinal-position"
LAT_POS = "lateral-position"
VELOCITY = "velocity"
ACCELERATION = "acceleration"
UNCATEGORIZED = "uncategorized"
CATEGORIES = (LONG_POS, LAT_POS, VELOCITY, ACCELERATION, UNCATEGORIZED)


class UnknownPredicate(KeyError):
    pass


class MissingObstacle(ValueError):
    pass


class NotProjectable(Exception):
    """The predicate cannot be turned into a per-step state constraint."""


@dataclass(frozen=True)
class SafeDistanceParams:
    a_min: float = -10.0
    a_min_obs: float = -10.0
    t_react: float = 0.4
    a_comf: float = -2.0


PARAMS = SafeDistanceParams()
V_STILL = 0.01
CUT_IN_MIN_SPEED = 0.1


# -- regions ----------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Union of closed boxes (s_lo, s_hi, v_lo, v_hi, d_lo, d_hi)."""
    boxes: tuple[tuple[float, float, float, float, float, float], ...]

    @staticmethod
    def full() -> "Region":
        inf = math.inf
        return Region(((-inf, inf, -inf, inf, -inf, inf),))

    @staticmethod
    def empty() -> "Region":
        return Region(())

    @staticmethod
    def box(s=(-math.inf, math.inf), v=(-math.inf, math.inf), d=(-math.inf, math.inf)) -> "Region":
        if s[0] > s[1] or v[0] > v[1] or d[0] > d[1]:
            return Region.empty()
        return Region(((s[0], s[1], v[0], v[1], d[0], d[1]),))

    def is_empty(self) -> bool:
        return not self.boxes

    def contains(self, s: float, v: float, d: float) -> bool:
        return any(b[0] <= s <= b[1] and b[2] <= v <= b[3] and b[4] <= d <= b[5] for b in self.boxes)

    def union(self, other: "Region") -> "Region":
        return Region(self.boxes + other.boxes)

    def intersect(self, other: "Region") -> "Region":
        out = []
        for a in self.boxes:
            for b in other.boxes:
                c = (max(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), min(a[3], b[3]),
                     max(a[4], b[4]), min(a[5], b[5]))
                if c[0] <= c[1] and c[2] <= c[3] and c[4] <= c[5]:
                    out.append(c)
        return Region(tuple(out))


# -- catalog ----------------------------------------------------------------

MarginFn = Callable[[Scenario, object, Optional[tuple[Obstacle, State]], int], np.ndarray]
ProjectFn = Callable[[Scenario, Optional[tuple[Obstacle, State]], int, bool], Region]


@dataclass(frozen=True)
class PredicateDef:
    id: str
    arity: str
    category: str
    margin: MarginFn = field(repr=False)
    projector: ProjectFn | None = field(default=None, repr=False)
    description: str = ""

    @property
    def needs_obstacle(self) -> bool:
        return self.arity == "ego-obstacle"


def _like(ego, value: float) -> np.ndarray:
    return np.full(np.shape(ego.s), value, dtype=float)


def _half(sc: Scenario) -> tuple[float, float]:
    return sc.ego_length / 2, sc.ego_width / 2


# stop_line_in_front: each position is associated with the nearest stop line,
# so a line that was just crossed stays associated (and the predicate false)
# until the next line is nearer.

def _stop_lines(sc):
    lines = np.array(sorted(sc.road.stop_lines), dtype=float)
    mids = (lines[1:] + lines[:-1]) / 2
    return lines, mids


def _m_stop_line(sc, ego, obs, k):
    if not sc.road.stop_lines:
        return _like(ego, -1.0)
    lines, mids = _stop_lines(sc)
    front = np.asarray(ego.s, dtype=float) + sc.ego_length / 2
    idx = np.searchsorted(mids, front, side="right")
    return lines[idx] - front


def _p_stop_line(sc, obs, k, polarity):
    if not sc.road.stop_lines:
        return Region.empty() if polarity else Region.full()
    lines, mids = _stop_lines(sc)
    half = sc.ego_length / 2
    edges = np.concatenate([[-math.inf], mids, [math.inf]])
    boxes = Region.empty()
    for i, line in enumerate(lines):
        if polarity:
            boxes = boxes.union(Region.box(s=(edges[i] - half, line - half)))
        else:
            boxes = boxes.union(Region.box(s=(line - half, edges[i + 1] - half)))
    return boxes


def _m_standstill(sc, ego, obs, k):
    return V_STILL - np.abs(np.asarray(ego.s_dot, dtype=float))


def _p_standstill(sc, obs, k, polarity):
    if polarity:
        return Region.box(v=(-V_STILL, V_STILL))
    return Region.box(v=(-math.inf, -V_STILL)).union(Region.box(v=(V_STILL, math.inf)))


def _lane_limit(sc, s):
    breaks = sc.road.speed_limit.breaks
    starts = np.array([b[0] for b in breaks])
    values = np.array([b[1] for b in breaks])
    idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(values) - 1)
    return values[idx]


def _m_lane_limit(sc, ego, obs, k):
    return _lane_limit(sc, np.asarray(ego.s, dtype=float)) - np.asarray(ego.s_dot, dtype=float)


def _p_lane_limit(sc, obs, k, polarity):
    out = Region.empty()
    for lo, hi, v in sc.road.speed_limit.segments():
        v_rng = (-math.inf, v) if polarity else (v, math.inf)
        out = out.union(Region.box(s=(lo, hi), v=v_rng))
    return out


def _limit(source):
    def margin(sc, ego, obs, k):
        return sc.speed_limits[source] - np.asarray(ego.s_dot, dtype=float)

    def project(sc, obs, k, polarity):
        v = sc.speed_limits[source]
        return Region.box(v=(-math.inf, v) if polarity else (v, math.inf))
    return margin, project


def _m_on_intersection(sc, ego, obs, k):
    iv = sc.road.intersection_interval
    if iv is None:
        return _like(ego, -1.0)
    s = np.asarray(ego.s, dtype=float)
    return np.minimum(s - iv[0], iv[1] - s)


def _p_on_intersection(sc, obs, k, polarity):
    iv = sc.road.intersection_interval
    if iv is None:
        return Region.empty() if polarity else Region.full()
    if polarity:
        return Region.box(s=iv)
    return Region.box(s=(-math.inf, iv[0])).union(Region.box(s=(iv[1], math.inf)))


def _flag(name):
    def margin(sc, ego, obs, k):
        return _like(ego, 1.0 if sc.flag(name, k) else -1.0)

    def project(sc, obs, k, polarity):
        return Region.full() if sc.flag(name, k) == polarity else Region.empty()
    return margin, project


def _same_frame(obs) -> bool:
    return obs is not None and obs[0].frame == "ego_path"


def _m_behind(sc, ego, obs, k):
    if not _same_frame(obs):
        return _like(ego, -1.0)
    o, x = obs
    return (x.s - o.length / 2) - (np.asarray(ego.s, dtype=float) + sc.ego_length / 2)


def _p_behind(sc, obs, k, polarity):
    if not _same_frame(obs):
        return Region.empty() if polarity else Region.full()
    o, x = obs
    edge = x.s - o.length / 2 - sc.ego_length / 2
    return Region.box(s=(-math.inf, edge)) if polarity else Region.box(s=(edge, math.inf))


def _lane_of(sc, s, d):
    lr = np.asarray(sc.road.lane_right(s), dtype=float)
    width = np.asarray(sc.road.lane_left(s), dtype=float) - lr
    i = np.floor((np.asarray(d, dtype=float) - lr) / width)
    lo = lr + i * width
    return lo, lo + width


def _m_same_lane(sc, ego, obs, k):
    if not _same_frame(obs):
        return _like(ego, -1.0)
    o, x = obs
    lo, hi = _lane_of(sc, x.s, x.d)
    d = np.asarray(ego.d, dtype=float)
    half_w = sc.ego_width / 2
    return np.minimum(d + half_w, hi) - np.maximum(d - half_w, lo)


def _p_same_lane(sc, obs, k, polarity):
    if not _same_frame(obs):
        return Region.empty() if polarity else Region.full()
    o, x = obs
    lo, hi = (float(v) for v in _lane_of(sc, x.s, x.d))
    half_w = sc.ego_width / 2
    if polarity:
        return Region.box(d=(lo - half_w, hi + half_w))
    return Region.box(d=(-math.inf, lo - half_w)).union(Region.box(d=(hi + half_w, math.inf)))


def _m_cut_in(sc, ego, obs, k):
    """Obstacle occupies the ego lane while still moving laterally toward its centre."""
    if not _same_frame(obs):
        return _like(ego, -1.0)
    o, x = obs
    lo, hi = _lane_of(sc, np.asarray(ego.s, dtype=float), np.asarray(ego.d, dtype=float))
    overlap = np.minimum(x.d + o.width / 2, hi) - np.maximum(x.d - o.width / 2, lo)
    centre = (lo + hi) / 2
    toward = -np.sign(x.d - centre) * x.d_dot
    return np.minimum(overlap, toward - CUT_IN_MIN_SPEED)


def _safe_distance_offset(v):
    p = PARAMS
    return v ** 2 / (2 * abs(p.a_min)) + v * p.t_react


def _m_safe_distance(sc, ego, obs, k):
    if not _same_frame(obs):
        return _like(ego, 1.0)
    o, x = obs
    v = np.asarray(ego.s_dot, dtype=float)
    gap = (x.s - o.length / 2) - (np.asarray(ego.s, dtype=float) + sc.ego_length / 2)
    d_safe = _safe_distance_offset(v) - x.s_dot ** 2 / (2 * abs(PARAMS.a_min_obs))
    return gap - d_safe


def _p_safe_distance(sc, obs, k, polarity, band: float = 1.0):
    if not _same_frame(obs):
        return Region.full() if polarity else Region.empty()
    o, x = obs
    # margin > 0  <=>  s < c - g(v), g convex with its minimum at v*.
    c = x.s - o.length / 2 - sc.ego_length / 2 + x.s_dot ** 2 / (2 * abs(PARAMS.a_min_obs))
    v_star = -PARAMS.t_react * abs(PARAMS.a_min)
    lo = math.floor(min(sc.state_bounds.s_dot.lo, 0.0))
    hi = math.ceil(max(sc.state_bounds.s_dot.hi, 1.0))
    edges = list(np.arange(lo, hi + band / 2, band))
    g = _safe_distance_offset
    out = []
    for v1, v2 in zip(edges[:-1], edges[1:]):
        g_min = g(min(max(v_star, v1), v2))
        g_max = max(g(v1), g(v2))
        if polarity:
            out.append((-math.inf, c - g_min, v1, v2, -math.inf, math.inf))
        else:
            out.append((c - g_max, math.inf, v1, v2, -math.inf, math.inf))
    inf = math.inf
    if polarity:
        # minimum of g over the unbounded outer bands
        out.append((-inf, c - g(min(v_star, edges[0])), -inf, edges[0], -inf, inf))
        out.append((-inf, c - g(max(v_star, edges[-1])), edges[-1], inf, -inf, inf))
    else:
        out.append((-inf, inf, -inf, edges[0], -inf, inf))
        out.append((-inf, inf, edges[-1], inf, -inf, inf))
    return Region(tuple(out))


def _conflict(sc, obs):
    if obs is None:
        return None
    return sc.road.conflict_area(obs[0].id)


def _overlap(centre, half, interval):
    return np.minimum(centre + half, interval[1]) - np.maximum(centre - half, interval[0])


def _m_ego_in_ca(sc, ego, obs, k):
    ca = _conflict(sc, obs)
    if ca is None:
        return _like(ego, -1.0)
    return _overlap(np.asarray(ego.s, dtype=float), sc.ego_length / 2, ca.ego_interval)


def _p_ego_in_ca(sc, obs, k, polarity):
    ca = _conflict(sc, obs)
    if ca is None:
        return Region.empty() if polarity else Region.full()
    half = sc.ego_length / 2
    lo, hi = ca.ego_interval
    if polarity:
        return Region.box(s=(lo - half, hi + half))
    return Region.box(s=(-math.inf, lo - half)).union(Region.box(s=(hi + half, math.inf)))


def _m_obs_in_ca(sc, ego, obs, k):
    ca = _conflict(sc, obs)
    if ca is None:
        return _like(ego, -1.0)
    o, x = obs
    return _like(ego, float(_overlap(x.s, o.length / 2, ca.obstacle_interval)))


def _p_obs_in_ca(sc, obs, k, polarity):
    ca = _conflict(sc, obs)
    if ca is None:
        return Region.empty() if polarity else Region.full()
    o, x = obs
    holds = float(_overlap(x.s, o.length / 2, ca.obstacle_interval)) > 0
    return Region.full() if holds == polarity else Region.empty()


def required_deceleration(sc, obs) -> float:
    """Deceleration the obstacle needs to stop before its conflict interval."""
    ca = _conflict(sc, obs)
    o, x = obs
    dist = ca.obstacle_interval[0] - (x.s + o.length / 2)
    if dist <= 0:
        return 0.0
    return x.s_dot ** 2 / (2 * dist)


def _m_causes_braking(sc, ego, obs, k):
    ca = _conflict(sc, obs)
    if ca is None:
        return _like(ego, -1.0)
    in_ca = _m_ego_in_ca(sc, ego, obs, k)
    return np.minimum(in_ca, required_deceleration(sc, obs) - abs(PARAMS.a_comf))


def _p_causes_braking(sc, obs, k, polarity):
    # the deceleration term depends on the obstacle only, so per step the
    # predicate reduces to the ego conflict-area test or to a constant
    if _conflict(sc, obs) is None or required_deceleration(sc, obs) - abs(PARAMS.a_comf) <= 0:
        return Region.full() if not polarity else Region.empty()
    return _p_ego_in_ca(sc, obs, k, polarity)


CATALOG: dict[str, PredicateDef] = {}


def _register(pid, arity, category, margin, projector, description):
    CATALOG[pid] = PredicateDef(pid, arity, category, margin, projector, description)


_register("stop_line_in_front", "ego", LONG_POS, _m_stop_line, _p_stop_line,
          "s_stop - (s + l/2) for the stop line nearest to the ego front")
_register("in_standstill", "ego", VELOCITY, _m_standstill, _p_standstill,
          "0.01 - |s_dot|")
_register("keeps_lane_speed_limit", "ego", VELOCITY, _m_lane_limit, _p_lane_limit,
          "speed_limit(s) - s_dot")
for _src in ("type", "fov", "braking"):
    _m, _p = _limit(_src)
    _register(f"keeps_{_src}_speed_limit", "ego", VELOCITY, _m, _p,
              f"configured {_src} speed limit - s_dot")
_register("on_lanelet_with_type_intersection", "ego", LONG_POS, _m_on_intersection, _p_on_intersection,
          "signed distance of s to the border of the intersection interval")
for _name in ("at_traffic_sign_stop", "relevant_traffic_light", "has_priority_conflict"):
    _m, _p = _flag(_name)
    _register(_name, "ego", UNCATEGORIZED, _m, _p, "scenario flag, +1 when set and -1 otherwise")
_register("behind", "ego-obstacle", LONG_POS, _m_behind, _p_behind,
          "obstacle rear minus ego front")
_register("in_same_lane", "ego-obstacle", LAT_POS, _m_same_lane, _p_same_lane,
          "lateral overlap of the ego occupancy with the lane of the obstacle centre")
_register("cut_in", "ego-obstacle", LAT_POS, _m_cut_in, None,
          "min(obstacle overlap with the ego lane, lateral speed toward the lane centre - 0.1)")
_register("keeps_safe_distance_prec", "ego-obstacle", LONG_POS, _m_safe_distance, _p_safe_distance,
          "gap - (v^2/(2|a_min|) - v_obs^2/(2|a_min,obs|) + v t_react)")
_register("in_intersection_conflict_area", "ego-obstacle", LONG_POS, _m_ego_in_ca, _p_ego_in_ca,
          "overlap of the ego occupancy with its conflict interval")
_register("obstacle_in_intersection_conflict_area", "ego-obstacle", UNCATEGORIZED, _m_obs_in_ca, _p_obs_in_ca,
          "overlap of the obstacle occupancy with its conflict interval")
_register("causes_braking_intersection", "ego-obstacle", LONG_POS, _m_causes_braking, _p_causes_braking,
          "min(ego conflict overlap, obstacle required deceleration - |a_comf|)")


def get(pred_id: str) -> PredicateDef:
    try:
        return CATALOG[pred_id]
    except KeyError:
        raise UnknownPredicate(pred_id) from None


def obstacle_view(sc: Scenario, obstacle_id: str | None, k: int) -> tuple[Obstacle, State] | None:
    if obstacle_id is None:
        obs = sc.relevant_obstacle()
    else:
        obs = sc.obstacle(obstacle_id)
    if obs is None:
        return None
    state, _ = extrapolate(obs, k, sc.dt)
    return obs, state


def margin_of(pred_id: str, sc: Scenario, ego, k: int, obs: tuple[Obstacle, State] | None) -> np.ndarray:
    pd = get(pred_id)
    if pd.needs_obstacle and obs is None:
        return np.full(np.shape(ego.s), -1.0)
    return pd.margin(sc, ego, obs, k)


def eval_predicate(pred_id: str, sc: Scenario, k: int, obstacle: str | None = None) -> tuple[bool, float]:
    """Truth and margin of a predicate on the scenario's ego trajectory at step k."""
    pd = get(pred_id)
    if k > sc.horizon:
        raise IndexError(f"step {k} beyond horizon {sc.horizon}")
    obs = None
    if pd.needs_obstacle:
        if obstacle is None and sc.relevant_obstacle() is None:
            raise MissingObstacle(pred_id)
        obs = obstacle_view(sc, obstacle, k)
    ego = sc.ego_trajectory.states[k]
    m = float(pd.margin(sc, ego, obs, k))
    return m > 0, m


def project_predicate(pred_id: str, sc: Scenario, k: int, polarity: bool,
                      obstacle: str | None = None) -> Region:
    pd = get(pred_id)
    if pd.projector is None:
        raise NotProjectable(pred_id)
    obs = obstacle_view(sc, obstacle, k) if pd.needs_obstacle else None
    if pd.needs_obstacle and obs is None:
        # an absent obstacle makes the predicate false
        return Region.empty() if polarity else Region.full()
    return pd.projector(sc, obs, k, polarity)


class TraceSignal:
    """Signal view over the scenario's ego trajectory.

    Robustness is tanh of the margin, clamped away from zero, which keeps the
    sign of the margin; model-predictive robustness lives in module mpr.
    """

    def __init__(self, sc: Scenario, obstacle: str | None = None):
        self.sc = sc
        self.length = sc.horizon + 1
        self.obstacle = obstacle
        self._cache: dict[tuple[str, int], float] = {}
        self._obs = [obstacle_view(sc, obstacle, k) if sc.obstacles else None for k in range(self.length)]

    def margin(self, pred_id: str, k: int) -> float:
        key = (pred_id, k)
        m = self._cache.get(key)
        if m is None:
            m = float(margin_of(pred_id, self.sc, self.sc.ego_trajectory.states[k], k, self._obs[k]))
            self._cache[key] = m
        return m

    def eval(self, pred_id: str, k: int) -> bool:
        return self.margin(pred_id, k) > 0

    def rob(self, pred_id: str, k: int) -> float:
        m = self.margin(pred_id, k)
        r = math.tanh(m)
        if m > 0:
            return max(r, EPS)
        return min(r, -EPS)


# -- rule library -----------------------------------------------------------

@dataclass(frozen=True)
class RuleLibraryEntry:
    name: str
    formula: Formula
    text: str
    parameters: dict
    description: str = ""


def _load_rules_doc(path=None) -> dict:
    if path is None:
        with resources.files("rulerepair").joinpath("data/rules.json").open(encoding="utf-8") as fh:
            return json.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_rules(path=None, dt: float = 0.2) -> dict[str, RuleLibraryEntry]:
    doc = _load_rules_doc(path)
    params = dict(doc.get("parameters", {}))
    out = {}
    for name, entry in doc["rules"].items():
        p = dict(params)
        p.update(entry.get("parameters", {}))
        f = parse(entry["formula"], dt=dt, params=p)
        unknown = {n for n in _predicate_ids(f) if n not in CATALOG}
        if unknown:
            raise UnknownPredicate(f"rule {name} uses {sorted(unknown)}")
        out[name] = RuleLibraryEntry(name, f, entry["formula"], p, entry.get("description", ""))
    return out


def _predicate_ids(f: Formula) -> set[str]:
    from .stl import predicates as pred_ids
    return pred_ids(f)


@lru_cache(maxsize=8)
def rule_library(dt: float = 0.2) -> dict[str, RuleLibraryEntry]:
    return load_rules(None, dt)


def rules_version(path=None) -> int:
    return int(_load_rules_doc(path).get("version", 0))


# -- collision --------------------------------------------------------------

def forbidden_boxes(sc: Scenario, k: int) -> list[tuple[float, float, float, float]]:
    """Open (s_lo, s_hi, d_lo, d_hi) sets of ego centres that collide at step k.

    Obstacles in the ego frame are inflated by the ego half-dimensions. A
    crossing obstacle forbids the ego conflict interval (inflated by half the
    ego length) while it occupies its own conflict interval.
    """
    out = []
    half_l, half_w = sc.ego_length / 2, sc.ego_width / 2
    for o in sc.obstacles:
        x, _ = extrapolate(o, k, sc.dt)
        if o.frame == "ego_path":
            out.append((x.s - o.length / 2 - half_l, x.s + o.length / 2 + half_l,
                        x.d - o.width / 2 - half_w, x.d + o.width / 2 + half_w))
            continue
        ca = sc.road.conflict_area(o.id)
        if ca is None:
            continue
        if float(_overlap(x.s, o.length / 2, ca.obstacle_interval)) > 0:
            lo, hi = ca.ego_interval
            out.append((lo - half_l, hi + half_l, -math.inf, math.inf))
    return out


def collides(sc: Scenario, k: int, s: float, d: float) -> bool:
    return any(a < s < b and c < d < e for a, b, c, e in forbidden_boxes(sc, k))


def collision_steps(sc: Scenario, states) -> list[int]:
    return [k for k, x in enumerate(states) if collides(sc, k, x.s, x.d)]


def off_road_steps(sc: Scenario, states, start: int = 0) -> list[int]:
    half_w = sc.ego_width / 2
    bad = []
    for k, x in enumerate(states):
        if k < start:
            continue
        if x.d + half_w > float(sc.road.road_left(x.s)) + 1e-9 or x.d - half_w < float(sc.road.road_right(x.s)) - 1e-9:
            bad.append(k)
    return bad

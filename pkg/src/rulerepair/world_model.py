"""Scenario representation, vehicle kinematics and curvilinear transforms.

Positions are curvilinear: ``s`` runs along the reference path and ``d`` is
the signed lateral offset (left positive). The longitudinal motion is a
fourth-order integrator chain (s, s_dot, s_ddot, s_dddot) driven by the jerk
rate; the lateral motion is a double integrator in ``d``.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

DYNAMICS_TOL = 1e-9


class AmbiguousProjection(ValueError):
    """Two path segments are equally close to a point but disagree on s."""


class ScenarioFormatError(ValueError):
    """The scenario document cannot be turned into a Scenario."""


@dataclass(frozen=True)
class State:
    s: float
    s_dot: float = 0.0
    s_ddot: float = 0.0
    s_dddot: float = 0.0
    d: float = 0.0
    d_dot: float = 0.0
    theta: float = 0.0
    t_index: int = 0

    def longitudinal(self) -> np.ndarray:
        return np.array([self.s, self.s_dot, self.s_ddot, self.s_dddot])

    def lateral(self) -> np.ndarray:
        return np.array([self.d, self.d_dot])


@dataclass(frozen=True)
class Input:
    u_long: float = 0.0
    u_lat: float = 0.0


def longitudinal_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold matrices of the 4th-order chain.

    The continuous system matrix is nilpotent, so the truncated exponential
    series is exact.
    """
    A = np.array([
        [1.0, dt, dt**2 / 2, dt**3 / 6],
        [0.0, 1.0, dt, dt**2 / 2],
        [0.0, 0.0, 1.0, dt],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B = np.array([dt**4 / 24, dt**3 / 6, dt**2 / 2, dt])
    return A, B


def lateral_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([dt**2 / 2, dt])
    return A, B


def heading(s_dot: float, d_dot: float) -> float:
    return math.atan2(d_dot, s_dot)


def step_dynamics(x: State, u: Input, dt: float) -> State:
    if dt <= 0:
        raise ValueError("dt must be positive")
    A, B = longitudinal_matrices(dt)
    lon = A @ x.longitudinal() + B * u.u_long
    Al, Bl = lateral_matrices(dt)
    lat = Al @ x.lateral() + Bl * u.u_lat
    s, v, a, j = (float(c) for c in lon)
    d, dd = float(lat[0]), float(lat[1])
    return State(s, v, a, j, d, dd, heading(v, dd), x.t_index + 1)


def rollout(x0: State, inputs: Sequence[Input], dt: float) -> tuple[State, ...]:
    states = [x0]
    for u in inputs:
        states.append(step_dynamics(states[-1], u, dt))
    return tuple(states)


@dataclass(frozen=True)
class Trajectory:
    states: tuple[State, ...]
    inputs: tuple[Input, ...]

    @classmethod
    def from_inputs(cls, x0: State, inputs: Sequence[Input], dt: float) -> "Trajectory":
        return cls(rollout(x0, inputs, dt), tuple(inputs))

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @cached_property
    def array(self) -> np.ndarray:
        """Rows are steps, columns (s, s_dot, s_ddot, s_dddot, d, d_dot)."""
        return np.array([[x.s, x.s_dot, x.s_ddot, x.s_dddot, x.d, x.d_dot] for x in self.states])

    @cached_property
    def input_array(self) -> np.ndarray:
        return np.array([[u.u_long, u.u_lat] for u in self.inputs]).reshape(-1, 2)


def dynamics_residual(traj: Trajectory, dt: float) -> float:
    worst = 0.0
    for k, u in enumerate(traj.inputs):
        nxt = step_dynamics(traj.states[k], u, dt)
        cur = traj.states[k + 1]
        for a, b in ((nxt.s, cur.s), (nxt.s_dot, cur.s_dot), (nxt.s_ddot, cur.s_ddot),
                     (nxt.s_dddot, cur.s_dddot), (nxt.d, cur.d), (nxt.d_dot, cur.d_dot)):
            worst = max(worst, abs(a - b))
    return worst


def check_trajectory(traj: Trajectory, dt: float, tol: float = DYNAMICS_TOL) -> list[str]:
    problems = []
    if len(traj.states) != len(traj.inputs) + 1:
        problems.append("LengthMismatch")
        return problems
    if dynamics_residual(traj, dt) > tol:
        problems.append("DynamicsMismatch")
    if any(x.t_index != traj.states[0].t_index + i for i, x in enumerate(traj.states)):
        problems.append("TimeIndexMismatch")
    return problems


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piecewise-linear function of s, held constant outside its support."""
    points: tuple[tuple[float, float], ...]

    def __call__(self, s):
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return np.interp(s, xs, ys)

    def lower(self) -> float:
        return min(p[1] for p in self.points)

    def upper(self) -> float:
        return max(p[1] for p in self.points)

    @classmethod
    def const(cls, value: float) -> "PiecewiseLinear":
        return cls(((0.0, value),))


@dataclass(frozen=True)
class PiecewiseConstant:
    """Value of the last breakpoint at or before s; the first value extends backwards."""
    breaks: tuple[tuple[float, float], ...]

    def __call__(self, s: float) -> float:
        starts = [b[0] for b in self.breaks]
        i = bisect.bisect_right(starts, s) - 1
        return self.breaks[max(i, 0)][1]

    def segments(self) -> list[tuple[float, float, float]]:
        """(s_lo, s_hi, value) with infinite outer ends."""
        out = []
        for i, (s0, v) in enumerate(self.breaks):
            lo = -math.inf if i == 0 else s0
            hi = self.breaks[i + 1][0] if i + 1 < len(self.breaks) else math.inf
            out.append((lo, hi, v))
        return out


@dataclass(frozen=True)
class ConflictArea:
    obstacle: str
    ego_interval: tuple[float, float]
    obstacle_interval: tuple[float, float]


@dataclass(frozen=True)
class RoadModel:
    reference_path: tuple[tuple[float, float], ...]
    lane_left: PiecewiseLinear
    lane_right: PiecewiseLinear
    road_left: PiecewiseLinear
    road_right: PiecewiseLinear
    stop_lines: tuple[float, ...] = ()
    speed_limit: PiecewiseConstant = PiecewiseConstant(((0.0, math.inf),))
    conflict_areas: tuple[ConflictArea, ...] = ()
    intersection_interval: tuple[float, float] | None = None

    @cached_property
    def _segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pts = np.asarray(self.reference_path, dtype=float)
        deltas = np.diff(pts, axis=0)
        lengths = np.hypot(deltas[:, 0], deltas[:, 1])
        starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        return pts, lengths, starts

    @property
    def path_length(self) -> float:
        _, lengths, _ = self._segments
        return float(lengths.sum())

    def lane_width(self, s: float) -> float:
        return float(self.lane_left(s) - self.lane_right(s))

    def conflict_area(self, obstacle_id: str) -> ConflictArea | None:
        for ca in self.conflict_areas:
            if ca.obstacle == obstacle_id:
                return ca
        return None


def cartesian_to_curvilinear(point: Sequence[float], road: RoadModel) -> tuple[float, float]:
    """Project a Cartesian point onto the reference path.

    The first and last segments are extended to infinity so points beyond the
    ends still get a coordinate. Raises AmbiguousProjection when two segments
    are equally close but yield different arc lengths.
    """
    pts, lengths, starts = road._segments
    p = np.asarray(point, dtype=float)
    n = len(lengths)
    candidates = []
    for i in range(n):
        a = pts[i]
        t_vec = (pts[i + 1] - a) / lengths[i]
        along = float(np.dot(p - a, t_vec))
        lo = -math.inf if i == 0 else 0.0
        hi = math.inf if i == n - 1 else lengths[i]
        along_c = min(max(along, lo), hi)
        foot = a + along_c * t_vec
        rel = p - foot
        dist = float(np.hypot(rel[0], rel[1]))
        cross = t_vec[0] * (p[1] - a[1]) - t_vec[1] * (p[0] - a[0])
        sign = 1.0 if cross >= 0 else -1.0
        candidates.append((dist, starts[i] + along_c, sign * dist))
    best = min(c[0] for c in candidates)
    ties = sorted((c for c in candidates if c[0] - best <= 1e-9), key=lambda c: c[1])
    if ties[-1][1] - ties[0][1] > 1e-9:
        raise AmbiguousProjection(f"point {tuple(p)} is equidistant to path parts at s={ties[0][1]:.6g} and s={ties[-1][1]:.6g}")
    return float(ties[0][1]), float(ties[0][2])


def curvilinear_to_cartesian(s: float, d: float, road: RoadModel) -> tuple[float, float]:
    pts, lengths, starts = road._segments
    i = int(np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(lengths) - 1))
    t_vec = (pts[i + 1] - pts[i]) / lengths[i]
    normal = np.array([-t_vec[1], t_vec[0]])
    xy = pts[i] + (s - starts[i]) * t_vec + d * normal
    return float(xy[0]), float(xy[1])


@dataclass(frozen=True)
class Obstacle:
    id: str
    states: tuple[State, ...]
    length: float
    width: float
    # "ego_path": s and d are measured along the ego reference path.
    # "own_path": s runs along the obstacle's own path; only conflict areas relate it to the ego.
    frame: str = "ego_path"


def extrapolate(obs: Obstacle, k: int, dt: float) -> tuple[State, bool]:
    """Recorded state, or constant-velocity continuation past the recording."""
    if k < len(obs.states):
        return obs.states[max(k, 0)], False
    last = obs.states[-1]
    n = k - (len(obs.states) - 1)
    t = n * dt
    return replace(last, s=last.s + last.s_dot * t, d=last.d + last.d_dot * t,
                   s_ddot=0.0, s_dddot=0.0, t_index=k), True


@dataclass(frozen=True)
class Box:
    lo: float
    hi: float

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol


@dataclass(frozen=True)
class StateBounds:
    s_dot: Box = Box(0.0, 40.0)
    s_ddot: Box = Box(-8.0, 3.0)
    s_dddot: Box = Box(-15.0, 15.0)
    d_dot: Box = Box(-3.0, 3.0)

    def at(self, k: int) -> "StateBounds":
        return self

    def violations(self, x: State, tol: float = 1e-6) -> list[str]:
        out = []
        for name in ("s_dot", "s_ddot", "s_dddot", "d_dot"):
            if not getattr(self, name).contains(getattr(x, name), tol):
                out.append(name)
        return out


@dataclass(frozen=True)
class InputBounds:
    u_long: Box = Box(-100.0, 100.0)
    u_lat: Box = Box(-4.0, 4.0)

    def at(self, k: int) -> "InputBounds":
        return self

    def violations(self, u: Input, tol: float = 1e-6) -> list[str]:
        out = []
        if not self.u_long.contains(u.u_long, tol):
            out.append("u_long")
        if not self.u_lat.contains(u.u_lat, tol):
            out.append("u_lat")
        return out


DEFAULT_SPEED_LIMITS = {"type": 60.0, "fov": 60.0, "braking": 60.0}


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    road: RoadModel
    ego_initial: State
    ego_trajectory: Trajectory
    obstacles: tuple[Obstacle, ...]
    ego_dims: tuple[float, float]
    dt: float
    horizon: int
    state_bounds: StateBounds = StateBounds()
    input_bounds: InputBounds = InputBounds()
    flags: dict[str, tuple[bool, ...]] = field(default_factory=dict)
    speed_limits: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SPEED_LIMITS))
    rule_obstacle: str | None = None
    rules: tuple[str, ...] = ()
    forward_only: bool = True
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def ego_length(self) -> float:
        return self.ego_dims[0]

    @property
    def ego_width(self) -> float:
        return self.ego_dims[1]

    def obstacle(self, obstacle_id: str) -> Obstacle:
        for o in self.obstacles:
            if o.id == obstacle_id:
                return o
        raise KeyError(obstacle_id)

    def relevant_obstacle(self) -> Obstacle | None:
        if self.rule_obstacle is not None:
            return self.obstacle(self.rule_obstacle)
        return self.obstacles[0] if self.obstacles else None

    def flag(self, name: str, k: int) -> bool:
        values = self.flags.get(name)
        if not values:
            return False
        return bool(values[min(max(k, 0), len(values) - 1)])

    def with_trajectory(self, traj: Trajectory) -> "Scenario":
        return replace(self, ego_trajectory=traj, ego_initial=traj.states[0])


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate_scenario(sc: Scenario) -> list[Violation]:
    out: list[Violation] = []

    def add(code: str, msg: str) -> None:
        out.append(Violation(code, msg))

    if not sc.dt > 0:
        add("DtInvalid", f"dt={sc.dt}")
    traj = sc.ego_trajectory
    if len(traj.states) != len(traj.inputs) + 1:
        add("LengthMismatch", f"{len(traj.states)} states vs {len(traj.inputs)} inputs")
    elif len(traj.states) != sc.horizon + 1:
        add("HorizonMismatch", f"ego has {len(traj.states)} states, horizon {sc.horizon}")
    elif sc.dt > 0 and dynamics_residual(traj, sc.dt) > DYNAMICS_TOL:
        add("DynamicsMismatch", "ego states do not follow the integrator dynamics")
    if traj.states and traj.states[0] != sc.ego_initial:
        add("InitialStateMismatch", "ego trajectory does not start at the initial state")
    if any(x.t_index != i for i, x in enumerate(traj.states)):
        add("TimeIndexMismatch", "t_index must count steps from zero")
    if any(not math.isfinite(x.s) for x in traj.states):
        add("NonFinitePosition", "ego s must be finite")
    if sc.forward_only and any(x.s_dot < -1e-6 for x in traj.states):
        add("BackwardMotion", "negative velocity in a forward-only scenario")
    for k, u in enumerate(traj.inputs):
        if sc.input_bounds.at(k).violations(u):
            add("InputOutOfBounds", f"input at step {k} leaves the admissible box")
            break
    for o in sc.obstacles:
        if len(o.states) != sc.horizon + 1:
            add("LengthMismatch", f"obstacle {o.id} has {len(o.states)} states, expected {sc.horizon + 1}")
        if o.frame not in ("ego_path", "own_path"):
            add("UnknownFrame", f"obstacle {o.id} frame {o.frame!r}")
    road = sc.road
    if len(road.reference_path) < 2:
        add("PathTooShort", "reference path needs at least two points")
        return out
    length = road.path_length
    probe = np.linspace(0.0, length, 50)
    if np.any(road.lane_right(probe) >= road.lane_left(probe)):
        add("LaneBoundsInverted", "lane_right must stay below lane_left")
    if np.any(road.road_right(probe) > road.lane_right(probe)) or np.any(road.road_left(probe) < road.lane_left(probe)):
        add("RoadBoundsInverted", "road boundaries must enclose the lane")
    for s_stop in road.stop_lines:
        if not 0.0 <= s_stop <= length:
            add("StopLineOutOfDomain", f"stop line at s={s_stop} outside [0, {length:.3f}]")
    ids = {o.id for o in sc.obstacles}
    for ca in road.conflict_areas:
        lo, hi = ca.ego_interval
        if not (0.0 <= lo <= hi <= length):
            add("ConflictAreaOutOfDomain", f"conflict area for {ca.obstacle} outside the path domain")
        if ca.obstacle not in ids:
            add("UnknownObstacle", f"conflict area references unknown obstacle {ca.obstacle}")
    if road.intersection_interval is not None:
        lo, hi = road.intersection_interval
        if not (0.0 <= lo <= hi <= length):
            add("IntersectionOutOfDomain", "intersection interval outside the path domain")
    for name, values in sc.flags.items():
        if len(values) != sc.horizon + 1:
            add("FlagLengthMismatch", f"flag {name} has {len(values)} entries")
    if sc.rule_obstacle is not None and sc.rule_obstacle not in ids:
        add("UnknownObstacle", f"rule obstacle {sc.rule_obstacle} not present")
    return out


# -- JSON (de)serialization -------------------------------------------------

_STATE_KEYS = ("s", "s_dot", "s_ddot", "s_dddot", "d", "d_dot")


def state_from_dict(d: dict, k: int = 0) -> State:
    vals = {key: float(d.get(key, 0.0)) for key in _STATE_KEYS}
    return State(**vals, theta=heading(vals["s_dot"], vals["d_dot"]), t_index=int(d.get("t_index", k)))


def state_to_dict(x: State) -> dict:
    return {"s": x.s, "s_dot": x.s_dot, "s_ddot": x.s_ddot, "s_dddot": x.s_dddot,
            "d": x.d, "d_dot": x.d_dot, "theta": x.theta, "t_index": x.t_index}


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {"states": [state_to_dict(x) for x in traj.states],
            "inputs": [[u.u_long, u.u_lat] for u in traj.inputs]}


def _pwl(spec, default: float) -> PiecewiseLinear:
    if spec is None:
        return PiecewiseLinear.const(default)
    if isinstance(spec, (int, float)):
        return PiecewiseLinear.const(float(spec))
    return PiecewiseLinear(tuple((float(a), float(b)) for a, b in spec))


def _box(spec, default: Box) -> Box:
    if spec is None:
        return default
    return Box(float(spec[0]), float(spec[1]))


def _flag_values(value, horizon: int) -> tuple[bool, ...]:
    if isinstance(value, bool):
        return (value,) * (horizon + 1)
    return tuple(bool(v) for v in value)


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        dt = float(doc["dt"])
        horizon = int(doc["horizon"])
        r = doc["road"]
        road = RoadModel(
            reference_path=tuple((float(x), float(y)) for x, y in r["reference_path"]),
            lane_left=_pwl(r.get("lane_left"), 1.75),
            lane_right=_pwl(r.get("lane_right"), -1.75),
            road_left=_pwl(r.get("road_left", r.get("lane_left")), 1.75),
            road_right=_pwl(r.get("road_right", r.get("lane_right")), -1.75),
            stop_lines=tuple(float(v) for v in r.get("stop_lines", ())),
            speed_limit=PiecewiseConstant(tuple((float(a), float(b)) for a, b in r["speed_limit"]))
            if isinstance(r.get("speed_limit"), list)
            else PiecewiseConstant(((0.0, float(r.get("speed_limit", math.inf))),)),
            conflict_areas=tuple(
                ConflictArea(ca["obstacle"], tuple(map(float, ca["ego_interval"])),
                             tuple(map(float, ca["obstacle_interval"])))
                for ca in r.get("conflict_areas", ())),
            intersection_interval=tuple(map(float, r["intersection_interval"]))
            if r.get("intersection_interval") is not None else None,
        )
        e = doc["ego"]
        inputs = tuple(Input(float(a), float(b)) for a, b in e.get("inputs", ()))
        if "states" in e:
            states = tuple(state_from_dict(s, k) for k, s in enumerate(e["states"]))
            traj = Trajectory(states, inputs)
        else:
            traj = Trajectory.from_inputs(state_from_dict(e["initial"]), inputs, dt)
        obstacles = []
        for o in doc.get("obstacles", ()):
            states = tuple(state_from_dict(s, k) for k, s in enumerate(o["states"]))
            obstacles.append(Obstacle(str(o["id"]), states, float(o.get("length", 4.5)),
                                      float(o.get("width", 1.8)), o.get("frame", "ego_path")))
        b = doc.get("bounds", {})
        bs, bi = b.get("state", {}), b.get("input", {})
        dflt_s, dflt_i = StateBounds(), InputBounds()
        state_bounds = StateBounds(*(_box(bs.get(n), getattr(dflt_s, n)) for n in ("s_dot", "s_ddot", "s_dddot", "d_dot")))
        input_bounds = InputBounds(_box(bi.get("u_long"), dflt_i.u_long), _box(bi.get("u_lat"), dflt_i.u_lat))
        limits = dict(DEFAULT_SPEED_LIMITS)
        limits.update({k: float(v) for k, v in doc.get("speed_limits", {}).items()})
        flags = {k: _flag_values(v, horizon) for k, v in doc.get("flags", {}).items()}
        return Scenario(
            name=str(doc.get("name", "scenario")),
            road=road,
            ego_initial=traj.states[0],
            ego_trajectory=traj,
            obstacles=tuple(obstacles),
            ego_dims=(float(e.get("length", 4.5)), float(e.get("width", 1.8))),
            dt=dt,
            horizon=horizon,
            state_bounds=state_bounds,
            input_bounds=input_bounds,
            flags=flags,
            speed_limits=limits,
            rule_obstacle=doc.get("rule_obstacle"),
            rules=tuple(doc.get("rules", ())),
            forward_only=bool(doc.get("forward_only", True)),
            meta=dict(doc.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc!r}") from exc


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict:
    road = sc.road
    sb, ib = sc.state_bounds, sc.input_bounds
    doc = {
        "name": sc.name,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "road": {
            "reference_path": [list(p) for p in road.reference_path],
            "lane_left": [list(p) for p in road.lane_left.points],
            "lane_right": [list(p) for p in road.lane_right.points],
            "road_left": [list(p) for p in road.road_left.points],
            "road_right": [list(p) for p in road.road_right.points],
            "stop_lines": list(road.stop_lines),
            "speed_limit": [[a, b] for a, b in road.speed_limit.breaks],
            "conflict_areas": [{"obstacle": ca.obstacle, "ego_interval": list(ca.ego_interval),
                                "obstacle_interval": list(ca.obstacle_interval)} for ca in road.conflict_areas],
            "intersection_interval": list(road.intersection_interval) if road.intersection_interval else None,
        },
        "ego": {"length": sc.ego_length, "width": sc.ego_width,
                "initial": {k: getattr(sc.ego_initial, k) for k in _STATE_KEYS},
                "inputs": [[u.u_long, u.u_lat] for u in sc.ego_trajectory.inputs]},
        "obstacles": [{"id": o.id, "length": o.length, "width": o.width, "frame": o.frame,
                       "states": [{k: getattr(x, k) for k in _STATE_KEYS} for x in o.states]}
                      for o in sc.obstacles],
        "bounds": {"state": {n: [getattr(sb, n).lo, getattr(sb, n).hi] for n in ("s_dot", "s_ddot", "s_dddot", "d_dot")},
                   "input": {"u_long": [ib.u_long.lo, ib.u_long.hi], "u_lat": [ib.u_lat.lo, ib.u_lat.hi]}},
        "flags": {k: list(v) for k, v in sc.flags.items()},
        "speed_limits": dict(sc.speed_limits),
        "rules": list(sc.rules),
        "forward_only": sc.forward_only,
    }
    if sc.rule_obstacle is not None:
        doc["rule_obstacle"] = sc.rule_obstacle
    if sc.meta:
        doc["meta"] = sc.meta
    return doc


def iter_scenario_files(directory: str | Path) -> Iterable[Path]:
    return sorted(Path(directory).glob("*.json"))


def bundled_scenario_dir() -> Path:
    """Directory of the scenario suite shipped with the package."""
    return Path(__file__).resolve().parent / "data" / "scenarios"

"""Generate the bundled scenario suite.

Run from the repository root:  python3 tools/make_scenarios.py
The stop line position and the ego start in the priority case are tuned here so the
latest braking start hits the intended step; the chosen values are written
into each scenario's meta block.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "rulerepair" / "data" / "scenarios"
DT = 0.2
H = 20


def road(length=400.0, lanes=1, lane_w=3.5, **extra):
    doc = {
        "reference_path": [[0.0, 0.0], [length, 0.0]],
        "lane_left": lane_w / 2,
        "lane_right": -lane_w / 2,
        "road_left": lane_w / 2 + (lanes - 1) * lane_w,
        "road_right": -lane_w / 2,
        "stop_lines": [],
        "speed_limit": 60.0,
        "conflict_areas": [],
        "intersection_interval": None,
    }
    doc.update(extra)
    return doc


def const_states(s0, v, d=0.0, a=0.0):
    out = []
    for k in range(H + 1):
        t = k * DT
        out.append({"s": s0 + v * t + a * t * t / 2, "s_dot": v + a * t, "s_ddot": a, "s_dddot": 0.0,
                    "d": d, "d_dot": 0.0})
    return out


def ego(s=0.0, v=10.0, a=0.0, d=0.0, inputs=None):
    return {"length": 4.5, "width": 1.8,
            "initial": {"s": s, "s_dot": v, "s_ddot": a, "s_dddot": 0.0, "d": d, "d_dot": 0.0},
            "inputs": inputs or [[0.0, 0.0]] * H}


def scenario(name, rules, **kw):
    doc = {"name": name, "dt": DT, "horizon": H, "rules": rules, "forward_only": True,
           "flags": {}, "obstacles": [], "meta": {}}
    doc.update(kw)
    return doc


def stopline(line, v=12.0):
    return scenario(
        "stopline", ["IN1"],
        road=road(stop_lines=[line]),
        ego=ego(v=v),
        flags={"at_traffic_sign_stop": True, "relevant_traffic_light": False},
        meta={"exemplar": "stop-line", "stop_line": line},
    )


def stopline_late(line):
    doc = stopline(line)
    doc["name"] = "stopline_late"
    doc["meta"] = {"stop_line": line, "expected": "Infeasible"}
    return doc


def multirule():
    return scenario(
        "multirule", ["G1", "G3"],
        road=road(lanes=2, speed_limit=36.0),
        ego=ego(v=28.0, a=1.0),
        obstacles=[{"id": "lead", "length": 4.5, "width": 1.8, "frame": "ego_path",
                    "states": const_states(40.0, 27.0)}],
        speed_limits={"braking": 30.0, "type": 60.0, "fov": 60.0},
        rule_obstacle="lead",
        meta={"exemplar": "multi-rule"},
    )


def priority(ego_s0, obs_s0=10.0):
    # the crossing vehicle drives along its own path; its conflict interval
    # is [30, 36] there, the ego's is [40, 46]
    return scenario(
        "priority", ["IN4s"],
        road=road(conflict_areas=[{"obstacle": "cross", "ego_interval": [40.0, 46.0],
                                   "obstacle_interval": [30.0, 36.0]}],
                  intersection_interval=[0.0, 120.0]),
        ego=ego(s=ego_s0, v=10.0),
        obstacles=[{"id": "cross", "length": 4.5, "width": 1.8, "frame": "own_path",
                    "states": const_states(obs_s0, 8.0)}],
        flags={"has_priority_conflict": True},
        rule_obstacle="cross",
        meta={"exemplar": "priority", "ego_s0": ego_s0, "obstacle_s0": obs_s0},
    )


def compliant():
    return scenario(
        "compliant", ["G1", "G3"],
        road=road(lanes=2, speed_limit=30.0),
        ego=ego(v=20.0),
        obstacles=[{"id": "lead", "length": 4.5, "width": 1.8, "frame": "ego_path",
                    "states": const_states(80.0, 20.0)}],
        speed_limits={"braking": 60.0, "type": 60.0, "fov": 60.0},
        rule_obstacle="lead",
    )


def speeding():
    return scenario(
        "speeding", ["G3"],
        road=road(speed_limit=[[0.0, 25.0], [60.0, 16.0]]),
        ego=ego(v=20.0),
        meta={"note": "lane speed limit drops ahead"},
    )


def tailgating():
    return scenario(
        "tailgating", ["G1"],
        road=road(lanes=2),
        ego=ego(v=20.0),
        obstacles=[{"id": "lead", "length": 4.5, "width": 1.8, "frame": "ego_path",
                    "states": const_states(30.0, 15.0)}],
        rule_obstacle="lead",
    )


def cut_in():
    # neighbour merges into the ego lane right in front of the ego
    states = []
    for k in range(H + 1):
        t = k * DT
        d = max(3.5 - 1.5 * t, 0.0)
        states.append({"s": 18.0 + 14.0 * t, "s_dot": 14.0, "s_ddot": 0.0, "s_dddot": 0.0,
                       "d": d, "d_dot": -1.5 if d > 0 else 0.0})
    return scenario(
        "cut_in", ["G1"],
        road=road(lanes=2),
        ego=ego(v=15.0),
        obstacles=[{"id": "merger", "length": 4.5, "width": 1.8, "frame": "ego_path", "states": states}],
        rule_obstacle="merger",
    )


def _latest_braking(doc):
    from rulerepair import abstraction as AB
    from rulerepair.criticality import Maneuver, requirement, time_to_maneuver
    from rulerepair.predicates import TraceSignal, rule_library
    from rulerepair.stl import Monitor
    from rulerepair.world_model import scenario_from_dict

    sc = scenario_from_dict(doc)
    rule = rule_library(sc.dt)[doc["rules"][0]].formula
    tv = Monitor(TraceSignal(sc)).tv(rule, 0)
    if tv == math.inf:
        return None, tv
    ar = AB.abstract(rule)
    target = 2  # stay in front of the line / stay out of the conflict area
    k, _ = time_to_maneuver(sc, Maneuver("TTB"), requirement(ar, {target: True}, [target]), int(tv))
    return k, tv


def find_witness(doc):
    """Latest-start maneuver template whose splice complies with all rules, or None."""
    from rulerepair.criticality import KIND_ORDER, Maneuver
    from rulerepair.engine import resolve_rules
    from rulerepair.predicates import TraceSignal
    from rulerepair.repair_opt import splice_and_verify
    from rulerepair.stl import Monitor, conjoin_rules
    from rulerepair.world_model import scenario_from_dict

    sc = scenario_from_dict(doc)
    phi = conjoin_rules(resolve_rules(doc["rules"], sc.dt))
    if Monitor(TraceSignal(sc)).tv(phi, 0) == math.inf:
        return None
    for k in range(sc.horizon - 1, -1, -1):
        for kind in KIND_ORDER:
            for inputs in Maneuver(kind).templates(sc, k):
                res = splice_and_verify(sc, inputs, k, phi)
                if res.ok:
                    return {"k": k, "maneuver": kind,
                            "inputs": [[u.u_long, u.u_lat] for u in res.trajectory.inputs[k:]]}
    return None


def tune(make, values, want):
    for v in values:
        k, tv = _latest_braking(make(v))
        if k == want:
            return v, tv
    raise SystemExit(f"no value reaches TTB = {want}")


def main(argv=None):
    OUT.mkdir(parents=True, exist_ok=True)
    line, _ = tune(stopline, [20.0 + 0.5 * i for i in range(100)], 12)
    ego0, _ = tune(priority, [10.0 + 0.5 * i for i in range(40)], 5)
    docs = [stopline(line), stopline_late(9.0), multirule(), priority(ego0),
            compliant(), speeding(), tailgating(), cut_in()]
    for doc in docs:
        w = find_witness(doc)
        if w is not None:
            doc["meta"]["witness"] = w
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=1) + "\n")
        print(path.relative_to(OUT.parents[2]), file=sys.stderr)


if __name__ == "__main__":
    main()

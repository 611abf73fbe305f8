import copy
import math
import zlib
from types import SimpleNamespace

import numpy as np
import pytest

from rulerepair import predicates as P
from rulerepair.abstraction import abstract
from rulerepair.stl import is_nnf, parse, to_nnf
from rulerepair.world_model import scenario_from_dict


def _ego_at(doc, s, v=0.0):
    d = copy.deepcopy(doc)
    d["ego"]["initial"].update(s=s, s_dot=v, s_ddot=0.0)
    return scenario_from_dict(d)


def test_stop_line_margin(docs):
    doc = copy.deepcopy(docs["stopline"])
    doc["road"]["stop_lines"] = [45.0]
    sc = _ego_at(doc, 40.0 - 2.25)
    truth, margin = P.eval_predicate("stop_line_in_front", sc, 0)
    assert truth and margin == pytest.approx(5.0)


def test_standstill_margin(docs):
    sc = _ego_at(docs["stopline"], 10.0, 0.0)
    assert P.eval_predicate("in_standstill", sc, 0) == (True, pytest.approx(0.01))


def test_safe_distance_equal_speeds(docs):
    sc = scenario_from_dict(docs["tailgating"])
    o = sc.obstacles[0]
    v = 15.0
    gap = 20.0
    ego = SimpleNamespace(s=np.array(o.states[0].s - o.length / 2 - sc.ego_length / 2 - gap), s_dot=np.array(v))
    obs = (o, o.states[0])
    assert obs[1].s_dot == v
    m = float(P.margin_of("keeps_safe_distance_prec", sc, ego, 0, obs))
    # equal speeds: braking terms cancel, only the reaction distance remains
    assert m == pytest.approx(gap - v * 0.4)
    assert m > 0


def test_unknown_and_missing(scenarios):
    with pytest.raises(P.UnknownPredicate):
        P.eval_predicate("no_such_predicate", scenarios["stopline"], 0)
    with pytest.raises(P.MissingObstacle):
        P.eval_predicate("behind", scenarios["stopline"], 0)


def test_projection_examples(scenarios):
    sc = scenarios["stopline"]
    line = sc.road.stop_lines[0]
    r = P.project_predicate("stop_line_in_front", sc, 5, True)
    assert r.boxes == ((-math.inf, line - sc.ego_length / 2, -math.inf, math.inf, -math.inf, math.inf),)
    r = P.project_predicate("keeps_lane_speed_limit", scenarios["multirule"], 3, True)
    assert r.contains(0.0, 36.0, 0.0) and not r.contains(0.0, 36.5, 0.0)
    sc = scenarios["priority"]
    r = P.project_predicate("in_intersection_conflict_area", sc, 0, False)
    assert len(r.boxes) == 2
    lo, hi = sc.road.conflict_areas[0].ego_interval
    half = sc.ego_length / 2
    for s in np.linspace(lo - 20, hi + 20, 401):
        inside = s + half > lo and s - half < hi
        if not inside:
            assert r.contains(s, 5.0, 0.0)


def test_not_projectable(scenarios):
    with pytest.raises(P.NotProjectable):
        P.project_predicate("cut_in", scenarios["cut_in"], 0, True)


def _random_egos(rng, n, sc):
    s0 = sc.ego_trajectory.states[0].s
    return SimpleNamespace(
        s=rng.uniform(s0 - 20, s0 + 120, n),
        s_dot=rng.uniform(-2, 45, n),
        s_ddot=rng.uniform(-10, 5, n),
        s_dddot=np.zeros(n),
        d=rng.uniform(-4, 8, n),
        d_dot=rng.uniform(-2, 2, n),
    )


@pytest.mark.parametrize("pid", sorted(p for p, d in P.CATALOG.items() if d.projector is not None))
def test_projection_soundness(pid, scenarios):
    rng = np.random.default_rng(zlib.crc32(pid.encode()))
    total = 0
    for sc in scenarios.values():
        if P.get(pid).needs_obstacle and not sc.obstacles:
            continue
        for k in (0, 7, sc.horizon):
            ego = _random_egos(rng, 10_000 // 6, sc)
            obs = P.obstacle_view(sc, None, k)
            m = np.asarray(P.margin_of(pid, sc, ego, k, obs), dtype=float) * np.ones_like(ego.s)
            for polarity in (True, False):
                region = P.project_predicate(pid, sc, k, polarity)
                for i in np.nonzero((m > 0) == polarity)[0]:
                    assert region.contains(ego.s[i], ego.s_dot[i], ego.d[i]), (sc.name, k, polarity, i)
                    total += 1
    assert total > 0


def test_margin_sign_matches_truth(scenarios):
    for sc in scenarios.values():
        for pid in P.CATALOG:
            for k in (0, sc.horizon // 2, sc.horizon):
                try:
                    truth, margin = P.eval_predicate(pid, sc, k)
                except P.MissingObstacle:
                    continue
                assert truth == (margin > 0)


def test_categories_cover_catalog():
    assert {d.category for d in P.CATALOG.values()} <= set(P.CATEGORIES)
    assert P.get("stop_line_in_front").category == P.LONG_POS
    assert P.get("in_standstill").category == P.VELOCITY
    assert P.get("in_same_lane").category == P.LAT_POS


def test_rule_library_shapes():
    lib = P.rule_library(0.2)
    assert {"G1", "G3", "IN1", "IN4s"} <= set(lib)
    for entry in lib.values():
        assert P._predicate_ids(entry.formula) <= set(P.CATALOG)
        assert is_nnf(to_nnf(entry.formula))
    assert abstract(lib["IN1"].formula).n_props == 5
    assert lib["IN1"].formula == parse(str(lib["IN1"].formula))


def test_trace_signal_sign(scenarios):
    for sc in scenarios.values():
        sig = P.TraceSignal(sc)
        for pid in P.CATALOG:
            for k in range(0, sc.horizon + 1, 5):
                r = sig.rob(pid, k)
                assert r != 0 and (r > 0) == sig.eval(pid, k)

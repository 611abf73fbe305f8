import copy
import json
import math

import pytest

from rulerepair import engine as E
from rulerepair.world_model import bundled_scenario_dir, dynamics_residual, scenario_from_dict

EXPECTED = {
    "compliant": "NoViolation",
    "cut_in": "NoViolation",
    "stopline": "Repaired",
    "multirule": "Repaired",
    "priority": "Repaired",
    "speeding": "Repaired",
    "tailgating": "Repaired",
    "stopline_late": "Infeasible",
}


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_bundled_outcomes(name, outcomes):
    assert outcomes[name].kind == EXPECTED[name]


def test_compliant_has_infinite_tv(outcomes):
    out = outcomes["compliant"]
    assert out.tv == math.inf and out.diagnostics["tv"] == math.inf


def test_repaired_prefix_and_dynamics(outcomes, scenarios):
    for name, out in outcomes.items():
        if not isinstance(out, E.Repaired):
            continue
        base = scenarios[name].ego_trajectory
        assert out.trajectory.states[:out.k_cut + 1] == base.states[:out.k_cut + 1]
        assert out.trajectory.inputs[:out.k_cut] == base.inputs[:out.k_cut]
        assert dynamics_residual(out.trajectory, scenarios[name].dt) <= 1e-6


def test_stop_line_history(outcomes):
    out = outcomes["stopline"]
    assert out.iterations == 2 and out.k_cut == 12
    first, second = out.diagnostics["iterations"]
    assert first["failure"] == "no_actionable_proposition"
    assert second["tc"] == 12
    assert out.valuation == {1: False, 2: True}


def test_learned_conflicts_grow(scenarios):
    # every failed iteration bans its valuation, so no valuation repeats
    out = E.repair(scenarios["stopline_late"], None, E.EngineConfig())
    vals = [it["valuation"] for it in out.diagnostics["iterations"]]
    assert len(vals) == len(set(vals)) and out.iterations == len(vals)
    assert out.reason in (E.UNSAT, E.EXHAUSTED, E.EMPTY_REACH, E.VERIFICATION)


def test_deterministic(scenarios):
    a = E.repair(scenarios["priority"], None, E.EngineConfig())
    b = E.repair(scenarios["priority"], None, E.EngineConfig())
    assert a.trajectory == b.trajectory and a.k_cut == b.k_cut
    assert E.outcome_to_dict(a) == E.outcome_to_dict(b)


def test_max_iterations_validated():
    with pytest.raises(ValueError):
        E.EngineConfig(max_iterations=0)


def test_single_iteration_cannot_repair_stop_line(scenarios):
    out = E.repair(scenarios["stopline"], None, E.EngineConfig(max_iterations=1))
    assert isinstance(out, E.Infeasible) and out.iterations == 1


def test_invalid_scenario_rejected(docs):
    doc = copy.deepcopy(docs["stopline"])
    doc["road"]["stop_lines"] = [1e4]
    with pytest.raises(E.ScenarioInvalid) as info:
        E.repair(scenario_from_dict(doc))
    assert info.value.violations[0].code == "StopLineOutOfDomain"


def test_unknown_rule(scenarios):
    with pytest.raises(KeyError):
        E.repair(scenarios["stopline"], ["NO_SUCH_RULE"])


def test_failure_reason_mapping():
    from collections import Counter
    assert E._failure_reason(Counter()) == E.UNSAT
    assert E._failure_reason(Counter(empty_reach=2)) == E.EMPTY_REACH
    assert E._failure_reason(Counter(verification=1, qp_infeasible=1)) == E.VERIFICATION
    assert E._failure_reason(Counter(verification=1, no_maneuver=1)) == E.EXHAUSTED


def test_outcome_dict_is_json(outcomes):
    for out in outcomes.values():
        doc = E.outcome_to_dict(out, timings=True)
        assert json.loads(json.dumps(doc))["outcome"] == out.kind


def test_batch_empty_dir(tmp_path):
    rep = E.run_batch(tmp_path)
    assert rep["scenarios"] == [] and rep["summary"]["scenarios"] == 0


def test_batch_isolates_errors(tmp_path, docs):
    (tmp_path / "ok.json").write_text(json.dumps(docs["compliant"]))
    (tmp_path / "bad.json").write_text("{not json")
    rep = E.run_batch(tmp_path)
    rows = {r["file"]: r for r in rep["scenarios"]}
    assert rows["ok.json"]["outcome"] == "NoViolation"
    assert rows["bad.json"]["outcome"] == "Error"


def test_batch_bundled_summary():
    rep = E.run_batch(bundled_scenario_dir())
    s = rep["summary"]
    assert s["scenarios"] == len(EXPECTED)
    assert s["outcomes"]["Repaired"] == 5
    assert s["success_rate"] == pytest.approx(5 / 6)

"""Repair loop: monitor, abstract, SAT, time-to-comply, reach, QP, verify.

A valuation that fails at any theory stage is blocked with a conflict
clause and the SAT solver is asked again.
"""
from __future__ import annotations

import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import abstraction as AB
from . import predicates as P
from .criticality import NoActionableProposition, time_to_comply, trace_valuation
from .mpr import MPRSignal, SampleConfig, proposition_robustness
from .reach import Empty, Grid, NoConnectedCorridor, ProjectionUnavailable, compute_reach, extract_corridors
from .repair_opt import NumericalBreakdown, Weights, build_qp, solve_qp, splice_and_verify
from .sat import flipped_polarity, order_by_robustness, solve
from .stl import Formula, Monitor, conjoin_rules
from .world_model import Scenario, Trajectory, load_scenario, trajectory_to_dict, validate_scenario

log = logging.getLogger(__name__)

UNSAT = "UNSAT"
EXHAUSTED = "AllValuationsExhausted"
EMPTY_REACH = "EmptyReach"
VERIFICATION = "VerificationFailedEverywhere"


class ScenarioInvalid(ValueError):
    def __init__(self, violations):
        super().__init__("; ".join(f"{v.code}: {v.message}" for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class EngineConfig:
    max_iterations: int = 16
    budget_s: float = 1.0
    rules: tuple[str, ...] = ()
    mpr: SampleConfig = SampleConfig()
    grid: Grid = Grid()
    weights: Weights = Weights()
    n_corridors: int = 3
    rules_path: str | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class NoViolation:
    tv: float = math.inf
    diagnostics: dict = field(default_factory=dict)
    kind = "NoViolation"


@dataclass
class Repaired:
    trajectory: Trajectory
    k_cut: int
    valuation: dict[int, bool]
    iterations: int
    timings: dict[str, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    reach: object = field(default=None, repr=False, compare=False)
    kind = "Repaired"


@dataclass
class Infeasible:
    reason: str
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)
    kind = "Infeasible"


RepairOutcome = NoViolation | Repaired | Infeasible


def outcome_to_dict(out, timings: bool = False) -> dict:
    doc: dict = {"outcome": out.kind}
    if isinstance(out, Repaired):
        doc.update(k_cut=out.k_cut, iterations=out.iterations,
                   valuation={f"s{i}": v for i, v in sorted(out.valuation.items())},
                   trajectory=trajectory_to_dict(out.trajectory))
        if timings:
            doc["timings"] = {k: round(v, 6) for k, v in out.timings.items()}
    elif isinstance(out, Infeasible):
        doc.update(reason=out.reason, iterations=out.iterations)
    doc["diagnostics"] = _jsonable(out.diagnostics)
    return doc


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.floating, np.integer)):
        return _jsonable(x.item())
    return x


@lru_cache(maxsize=64)
def _rule_abstraction(rule: Formula) -> AB.AbstractionResult:
    return AB.abstract(rule)


def resolve_rules(names: Sequence[str], dt: float, rules_path: str | None = None) -> list[tuple[str, Formula]]:
    lib = P.load_rules(rules_path, dt) if rules_path else P.rule_library(dt)
    out = []
    for n in names:
        if n not in lib:
            raise KeyError(f"unknown rule {n!r}; available: {', '.join(sorted(lib))}")
        out.append((n, lib[n].formula))
    return out


def abstraction_for(rules: Sequence[tuple[str, Formula]]) -> AB.AbstractionResult:
    parts = [(n, _rule_abstraction(f)) for n, f in rules]
    if len(parts) == 1:
        return parts[0][1]
    return AB.merge(parts)


def _failure_reason(causes: Counter) -> str:
    if not causes:
        return UNSAT
    if set(causes) == {"empty_reach"}:
        return EMPTY_REACH
    if set(causes) <= {"verification", "qp_infeasible"}:
        return VERIFICATION
    return EXHAUSTED


def repair(sc: Scenario, rules: Sequence[str] | None = None, cfg: EngineConfig = EngineConfig()) -> RepairOutcome:
    t_start = time.perf_counter()
    timings: Counter = Counter()

    def lap(name, t0):
        timings[name] += time.perf_counter() - t0

    problems = validate_scenario(sc)
    if problems:
        raise ScenarioInvalid(problems)
    names = list(rules or cfg.rules or sc.rules)
    if not names:
        raise ValueError("no rules selected")
    t0 = time.perf_counter()
    rule_list = resolve_rules(names, sc.dt, cfg.rules_path)
    phi = conjoin_rules(rule_list)
    sig = P.TraceSignal(sc)
    mon = Monitor(sig)
    per_rule = {n: mon.tv(f, 0) for n, f in rule_list}
    tv = mon.tv(phi, 0)
    lap("monitor", t0)
    diag: dict = {"tv": tv, "rule_tv": per_rule}
    if tv == math.inf:
        return NoViolation(tv, diag)
    tv = int(tv)
    h = sc.horizon

    t0 = time.perf_counter()
    ar = abstraction_for(rule_list)
    diag["propositions"] = {f"s{p.index}": str(p.subformula) for p in ar.propositions}
    lap("abstraction", t0)

    t0 = time.perf_counter()
    msig = MPRSignal(sc, cfg.mpr)
    rho = {p.index: proposition_robustness(p, sc, (tv, h), cfg.mpr, msig) for p in ar.propositions}
    order = order_by_robustness(rho)
    trace = trace_valuation(ar, sig, tv)
    polarity = flipped_polarity(trace)
    diag["robustness"] = {f"s{i}": round(v, 6) if math.isfinite(v) else v for i, v in rho.items()}
    diag["order"] = [f"s{i}" for i in order]
    lap("robustness", t0)

    causes: Counter = Counter()
    history = []
    diag["iterations"] = history
    for it in range(1, cfg.max_iterations + 1):
        if time.perf_counter() - t_start > cfg.budget_s:
            diag["stopped"] = "budget"
            break
        t0 = time.perf_counter()
        val = solve(ar, order, polarity)
        lap("sat", t0)
        if val is None:
            reason = UNSAT if it == 1 else _failure_reason(causes)
            diag["timings"] = dict(timings)
            return Infeasible(reason, it - 1, diag)
        entry = {"valuation": str(val)}
        history.append(entry)
        failure = _theory_check(sc, val, ar, tv, trace, phi, cfg, entry, timings)
        if isinstance(failure, Repaired):
            failure.iterations = it
            failure.timings = dict(timings, total=time.perf_counter() - t_start)
            failure.diagnostics = diag
            return failure
        entry["failure"] = failure
        causes[failure] += 1
        fixed = entry.get("fixed")
        if fixed:
            # each environment-only literal is blocked on its own
            for name, v in fixed.items():
                ar = AB.add_conflict(ar, {int(name[1:]): v})
        else:
            ar = AB.add_conflict(ar, val)
    diag["timings"] = dict(timings)
    return Infeasible(_failure_reason(causes) if causes else EXHAUSTED, len(history), diag)


def _theory_check(sc, val, ar, tv, trace, phi, cfg, entry, timings):
    t0 = time.perf_counter()
    try:
        cut = time_to_comply(sc, val, ar, tv, trace)
    except NoActionableProposition as exc:
        timings["criticality"] += time.perf_counter() - t0
        if exc.fixed:
            entry["fixed"] = {f"s{j}": v for j, v in exc.fixed.items()}
        return "no_actionable_proposition"
    timings["criticality"] += time.perf_counter() - t0
    entry.update(flipped=[f"s{j}" for j in cut.flipped_props], maneuvers=cut.maneuver_set,
                 ttm=dict(cut.per_maneuver_ttm), tc=cut.tc)
    if cut.tc == -math.inf:
        return "no_maneuver"
    k_cut = int(cut.tc)
    if k_cut >= sc.horizon:
        return "no_maneuver"
    t0 = time.perf_counter()
    try:
        rs = compute_reach(sc, k_cut, val, ar, tv, cfg.grid)
    except ProjectionUnavailable as exc:
        timings["reach"] += time.perf_counter() - t0
        entry["detail"] = str(exc)
        return "projection_unavailable"
    timings["reach"] += time.perf_counter() - t0
    if isinstance(rs, Empty):
        entry["empty_at"] = rs.at_step
        return "empty_reach"
    guide = cut.witness.get(max(cut.per_maneuver_ttm, key=cut.per_maneuver_ttm.get))
    try:
        corridors = extract_corridors(rs, cfg.n_corridors)
        if guide is not None:
            corridors = extract_corridors(rs, 1, guide) + corridors
    except NoConnectedCorridor:
        return "empty_reach"
    failure = "qp_infeasible"
    for cor in corridors:
        t0 = time.perf_counter()
        try:
            seg = solve_qp(build_qp(sc, cor, k_cut, cfg.weights, guide=guide))
        except NumericalBreakdown as exc:
            entry["detail"] = str(exc)
            seg = None
        timings["qp"] += time.perf_counter() - t0
        if seg is None:
            continue
        t0 = time.perf_counter()
        res = splice_and_verify(sc, seg, k_cut, phi)
        timings["verify"] += time.perf_counter() - t0
        if res.ok:
            return Repaired(res.trajectory, k_cut, dict(val.assignments), 0, reach=rs)
        entry["detail"] = res.reason
        failure = "verification"
    return failure


def _batch_one(args):
    path, rules, cfg = args
    t0 = time.perf_counter()
    row = {"file": Path(path).name}
    try:
        sc = load_scenario(path)
        row["name"] = sc.name
        out = repair(sc, rules or None, cfg)
        row["outcome"] = out.kind
        if isinstance(out, Repaired):
            row.update(k_cut=out.k_cut, iterations=out.iterations)
        elif isinstance(out, Infeasible):
            row.update(reason=out.reason, iterations=out.iterations)
    except Exception as exc:  # isolated per file
        row["outcome"] = "Error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["time_s"] = time.perf_counter() - t0
    return row


def run_batch(directory, rules: Sequence[str] | None = None, cfg: EngineConfig = EngineConfig(),
              workers: int = 1, files: Iterable | None = None) -> dict:
    paths = sorted(Path(directory).glob("*.json")) if files is None else [Path(f) for f in files]
    jobs = [(str(p), tuple(rules or ()), cfg) for p in paths]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_batch_one, jobs))
    else:
        rows = [_batch_one(j) for j in jobs]
    times = np.array([r["time_s"] for r in rows]) if rows else np.zeros(0)
    counts = Counter(r["outcome"] for r in rows)
    violating = sum(counts[k] for k in ("Repaired", "Infeasible"))
    summary = {
        "scenarios": len(rows),
        "outcomes": dict(counts),
        "success_rate": (counts["Repaired"] / violating) if violating else None,
    }
    if rows:
        summary.update(mean_time_s=float(times.mean()), p50_time_s=float(np.percentile(times, 50)),
                       p90_time_s=float(np.percentile(times, 90)), max_time_s=float(times.max()))
    return {"summary": summary, "scenarios": rows}

"""Command-line front end.

Exit codes: 0 no violation or repaired, 2 infeasible, 3 bad input, 4 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import abstraction as AB
from . import predicates as P
from . import plots, schema
from .engine import (EngineConfig, Infeasible, Repaired, ScenarioInvalid, abstraction_for, outcome_to_dict,
                     repair, resolve_rules, run_batch)
from .mpr import SampleConfig
from .reach import Empty, Grid, compute_reach
from .repair_opt import Weights
from .sat import to_dimacs
from .stl import Monitor, ParseError, conjoin_rules
from .world_model import ScenarioFormatError, scenario_from_dict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("rulerepair")


class InputError(Exception):
    pass


def _rule_names(values) -> list[str]:
    out = []
    for v in values or ():
        out += [x.strip() for x in v.split(",") if x.strip()]
    return out


def _load(path: str):
    if not Path(path).is_file():
        raise InputError(f"no such scenario file: {path}")
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    problems = schema.errors(doc, "scenario")
    if problems:
        raise InputError(f"{path}: {problems[0]}")
    return scenario_from_dict(doc)


def _engine_config(args) -> EngineConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise InputError(f"config {args.config}: {exc}") from exc
    eng = doc.get("engine", {})
    mpr = SampleConfig.from_mapping(doc.get("mpr", {}))
    if getattr(args, "seed", None) is not None:
        mpr = dataclasses.replace(mpr, rng_seed=args.seed)
    grid = Grid(**{k: v for k, v in doc.get("grid", {}).items() if k in Grid.__dataclass_fields__})
    weights = Weights(**{k: v for k, v in doc.get("weights", {}).items() if k in Weights.__dataclass_fields__})
    max_iter = args.max_iter if getattr(args, "max_iter", None) is not None else eng.get("max_iterations", 16)
    budget_ms = args.budget_ms if getattr(args, "budget_ms", None) is not None else eng.get("budget_ms", 1000)
    try:
        return EngineConfig(max_iterations=int(max_iter), budget_s=float(budget_ms) / 1000.0, mpr=mpr, grid=grid,
                            weights=weights, n_corridors=int(eng.get("n_corridors", 3)),
                            rules_path=getattr(args, "rules_file", None))
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _write(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _plot_stem(args, sc) -> Path:
    if args.out:
        out = Path(args.out)
        return out.with_name(out.stem)
    return Path(sc.name)


def cmd_repair(args) -> int:
    sc = _load(args.scenario)
    cfg = _engine_config(args)
    names = _rule_names(args.rules) or list(sc.rules)
    if args.dump_cnf:
        ar = abstraction_for(resolve_rules(names, sc.dt, cfg.rules_path))
        sys.stderr.write(to_dimacs(ar))
    out = repair(sc, names, cfg)
    doc = outcome_to_dict(out, timings=args.timings)
    _write(json.dumps(doc, indent=1) + "\n", args.out)
    if args.plot and isinstance(out, Repaired):
        stem = _plot_stem(args, sc)
        trajs = {"initial": sc.ego_trajectory, "repaired": out.trajectory}
        if args.plot == "csv":
            Path(f"{stem}_profile.csv").write_text(plots.profile_csv(sc.dt, **trajs))
            if out.reach is not None:
                Path(f"{stem}_reach.csv").write_text(out.reach.to_csv())
        else:
            Path(f"{stem}_velocity.svg").write_text(plots.velocity_svg(sc.dt, **trajs))
            if out.reach is not None:
                Path(f"{stem}_reach.svg").write_text(plots.reach_svg(out.reach, sc.dt, **trajs))
    if isinstance(out, Infeasible):
        sys.stderr.write(f"infeasible: {out.reason}\n")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_batch(args) -> int:
    d = Path(args.dir)
    if not d.is_dir():
        raise InputError(f"no such directory: {args.dir}")
    cfg = _engine_config(args)
    report = run_batch(d, _rule_names(args.rules) or None, cfg, workers=args.workers)
    _write(json.dumps(report, indent=1) + "\n", args.out)
    return EXIT_OK


def _fmt(v: float) -> str:
    if v == math.inf:
        return "inf"
    return str(v) if isinstance(v, int) else f"{v:.6g}"


def cmd_monitor(args) -> int:
    sc = _load(args.scenario)
    names = _rule_names(args.rules) or list(sc.rules)
    rules = resolve_rules(names, sc.dt, args.rules_file)
    mon = Monitor(P.TraceSignal(sc))
    print(f"TV = {_fmt(mon.tv(conjoin_rules(rules), 0))}")
    for name, f in rules:
        print(f"{name}: TV = {_fmt(mon.tv(f, 0))}, robustness = {_fmt(mon.robustness(f, 0))}")
    return EXIT_OK


def cmd_abstract(args) -> int:
    dt = _load(args.scenario).dt if args.scenario else 0.2
    names = _rule_names(args.rules)
    if not names:
        raise InputError("abstract needs --rules")
    ar = abstraction_for(resolve_rules(names, dt, args.rules_file))
    for p in ar.propositions:
        tag = " (past only)" if p.contains_past_only else ""
        print(f"s{p.index} = {p.subformula}{tag}")
    print(f"structure: {AB.structure_to_string(ar.structure)}")
    print(f"cnf: {AB.cnf_to_string(ar.cnf)}")
    if args.dump_cnf:
        sys.stdout.write(to_dimacs(ar))
    return EXIT_OK


def cmd_predicates(args) -> int:
    if args.list or not args.scenario:
        for pid, pd in sorted(P.CATALOG.items()):
            print(f"{pid}\t{pd.arity}\t{pd.category}\t{pd.description}")
        return EXIT_OK
    sc = _load(args.scenario)
    if not 0 <= args.step <= sc.horizon:
        raise InputError(f"step {args.step} outside [0, {sc.horizon}]")
    for pid in sorted(P.CATALOG):
        try:
            truth, margin = P.eval_predicate(pid, sc, args.step)
        except P.MissingObstacle:
            print(f"{pid}\tn/a (no obstacle)")
            continue
        print(f"{pid}\t{'T' if truth else 'F'}\t{margin:.6g}")
    return EXIT_OK


def cmd_dump_reach(args) -> int:
    sc = _load(args.scenario)
    cfg = _engine_config(args)
    names = _rule_names(args.rules)
    valuation = ar = tv = None
    if names:
        rules = resolve_rules(names, sc.dt, args.rules_file)
        ar = abstraction_for(rules)
        tv = Monitor(P.TraceSignal(sc)).tv(conjoin_rules(rules), 0)
        valuation = {int(x[1:].split("=")[0]): x.endswith("=T") for x in (args.valuation or "").split(",") if x}
        if not valuation:
            valuation = None
    if not 0 <= args.k_cut <= sc.horizon:
        raise InputError(f"k_cut {args.k_cut} outside [0, {sc.horizon}]")
    rs = compute_reach(sc, args.k_cut, valuation, ar, tv, cfg.grid)
    if isinstance(rs, Empty):
        sys.stderr.write(f"reachable set empty at step {rs.at_step}\n")
        return EXIT_INFEASIBLE
    _write(rs.to_csv(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rulerepair", description="Repair planned trajectories that violate traffic rules.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, engine=True):
        if scenario:
            p.add_argument("--scenario", required=scenario == "required", help="scenario JSON file")
        p.add_argument("--rules", "--rule", dest="rules", action="append",
                       help="rule names, comma separated (default: the scenario's)")
        p.add_argument("--rules-file", help="alternative rule library JSON")
        p.add_argument("--out", help="output file (default: stdout)")
        if engine:
            p.add_argument("--config", help="TOML file with [engine], [mpr], [grid], [weights] tables")
            p.add_argument("--seed", type=int, help="sampling seed")
            p.add_argument("--max-iter", type=int)
            p.add_argument("--budget-ms", type=float)

    p = sub.add_parser("repair", help="repair one scenario")
    common(p, "required")
    p.add_argument("--plot", choices=("csv", "svg"))
    p.add_argument("--dump-cnf", action="store_true", help="write the DIMACS encoding to stderr")
    p.add_argument("--timings", action="store_true")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("batch", help="repair every scenario in a directory")
    common(p, scenario=False)
    p.add_argument("--dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("monitor", help="time-to-violation and robustness")
    common(p, "required", engine=False)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("abstract", help="print the proposition map and CNF of rules")
    common(p, True, engine=False)
    p.add_argument("--dump-cnf", action="store_true")
    p.set_defaults(func=cmd_abstract)

    p = sub.add_parser("predicates", help="list the predicate catalog or evaluate it")
    p.add_argument("--scenario")
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--list", action="store_true", help="print the catalog (the default without --scenario)")
    p.set_defaults(func=cmd_predicates)

    p = sub.add_parser("dump-reach", help="reachable set cells as CSV")
    common(p, "required")
    p.add_argument("--k-cut", type=int, default=0)
    p.add_argument("--valuation", help="e.g. s1=F,s2=T")
    p.set_defaults(func=cmd_dump_reach)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("RULEREPAIR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ScenarioFormatError, ScenarioInvalid, ParseError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"error: {msg}\n")
        return EXIT_INPUT
    except Exception as exc:  # last resort, keep the one-line contract
        log.debug("internal error", exc_info=True)
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

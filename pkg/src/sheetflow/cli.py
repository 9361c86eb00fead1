"""Command line entry point.

Subcommands: `plan` (offline planning, prints per-sheet plans), `run` (full
planner + simulator loop with trace/metrics artifacts), `bench` (per-sheet
timing series, optionally across heuristic ablations), `serve` (live machine
with the browser console attached), `validate` (model lint).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .driver import compose_metrics, make_rig, run_scenario
from .graph import HeuristicConfig
from .manager import ManagerConfig, Status
from .model import ModelError, load_model
from .scenario import ScenarioSyntaxError, build_requests, parse_scenario
from .search import Objective
from .ticks import ticks_to_ms


def _scenario_arg(text: str) -> str:
    if text.startswith("@"):
        return Path(text[1:]).read_text().strip()
    return text


def _manager_config(args) -> ManagerConfig:
    return ManagerConfig(
        objective=Objective(w1=args.w1, w2=args.w2),
        policy=args.policy,
        heuristic=HeuristicConfig(),
        multi_table=getattr(args, "multi_table", False),
        use_wall_time=getattr(args, "realtime", False),
    )


def cmd_validate(args) -> int:
    try:
        model = load_model(args.model)
    except ModelError as e:
        print(f"model error: {e}", file=sys.stderr)
        return 2
    print(f"{model.name}: {len(model.modules)} modules, {len(model.actions)} ground actions")
    reach = model.reachable_finishers()
    sinks = set(model.finishers()) | set(model.purge_trays())
    for f in sorted(sinks - reach):
        print(f"warning: finisher {f} unreachable from the source")
    for w in model.warnings:
        print(f"warning: {w}")
    print("ok")
    return 0


def cmd_plan(args) -> int:
    model = load_model(args.model)
    scenario = parse_scenario(_scenario_arg(args.scenario))
    cfg = _manager_config(args)
    manager, _sim, clock = make_rig(model, seed=args.seed, config=cfg)
    for req in build_requests(scenario, model):
        manager.submit(req)
    while manager.unplanned:
        record = manager.plan_next()
        if record is None:
            continue
        clock.advance(record.plan_virtual)
        print(f"sheet {record.seq} ({record.job}) -> {record.finisher}  "
              f"end={ticks_to_ms(int(manager.stn.earliest(record.t6))):.0f}ms  "
              f"expanded {record.expansions} nodes in {record.plan_wall_s * 1000:.1f}ms")
        for step in record.steps:
            lo, hi = manager.stn.window_of(step.start)
            hi_txt = "inf" if hi == float("inf") else f"{ticks_to_ms(int(hi)):.0f}"
            print(f"    {step.action.name:40s} start [{ticks_to_ms(int(lo)):.0f}, {hi_txt}] ms")
    failed = [r.seq for r in manager.records.values() if r.status is Status.FAILED]
    if failed:
        print(f"failed sheets: {failed}", file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    model = load_model(args.model)
    scenario = parse_scenario(_scenario_arg(args.scenario))
    if args.w1 != 1.0 or args.w2 != 0.0:
        scenario.w1, scenario.w2 = args.w1, args.w2
    if args.policy != "purge":
        scenario.policy = args.policy
    cfg = _manager_config(args)
    cfg.objective = Objective(w1=scenario.w1, w2=scenario.w2)
    cfg.policy = scenario.policy
    if args.realtime:
        return _run_realtime(model, scenario, args, cfg)
    result = run_scenario(model, scenario, seed=args.seed, config=cfg)
    if args.trace:
        result.write_trace(args.trace)
    if args.metrics:
        result.write_metrics(args.metrics)
    m = result.metrics
    print(
        f"done={m['done']} purged={m['purged']} lost={m['lost']} "
        f"makespan={m['makespan_ms']:.0f}ms throughput={m['throughput_ppm']:.1f}ppm "
        f"mean_plan={m['mean_plan_wall_s'] * 1000:.1f}ms"
    )
    for p in result.diagnostics:
        print(f"audit: {p}", file=sys.stderr)
    return result.exit_code


def _run_realtime(model, scenario, args, cfg) -> int:
    from .server import LiveRig

    rig = LiveRig(model, seed=args.seed, config=cfg, pace=1.0)
    for req in build_requests(scenario, model):
        rig.manager.submit(req)
    t = rig.start()
    try:
        while True:
            time.sleep(0.2)
            mgr = rig.manager
            if not mgr.unplanned and rig.sim.next_event_time() is None and not any(
                r.status in (Status.PLANNED, Status.SENT) for r in mgr.records.values()
            ):
                break
    except KeyboardInterrupt:
        pass
    rig.stop()
    t.join(timeout=2)
    from .driver import audit_run

    problems = audit_run(rig.manager, rig.sim)
    metrics = compose_metrics(rig.manager, rig.sim)
    if args.metrics:
        Path(args.metrics).write_text(json.dumps(metrics, indent=1, sort_keys=True))
    if args.trace:
        with open(args.trace, "w") as fh:
            for ev in rig.sim.trace:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
    for p in problems:
        print(f"audit: {p}", file=sys.stderr)
    print(f"done={metrics['done']} makespan={metrics['makespan_ms']:.0f}ms")
    return 0 if not problems else 1


ABLATIONS = [
    ("none", HeuristicConfig(False, False)),
    ("logical", HeuristicConfig(True, False)),
    ("logical+resource", HeuristicConfig(True, True)),
]


def cmd_bench(args) -> int:
    model = load_model(args.model)
    scenario = parse_scenario(_scenario_arg(args.scenario))
    configs = ABLATIONS if args.ablate_mutex else [("logical+resource", HeuristicConfig())]
    budget_s = 60.0 / model.productivity_ppm if model.productivity_ppm else None
    series = {}
    for name, heuristic in configs:
        cfg = ManagerConfig(
            objective=Objective(w1=scenario.w1, w2=scenario.w2),
            policy=scenario.policy,
            heuristic=heuristic,
            multi_table=args.multi_table,
        )
        t0 = time.perf_counter()
        result = run_scenario(model, scenario, seed=args.seed, config=cfg)
        wall = time.perf_counter() - t0
        times = [p["wall_s"] for p in result.metrics["planning"]]
        expansions = [p["expansions"] for p in result.metrics["planning"]]
        series[name] = {
            "per_sheet_s": times,
            "expansions": expansions,
            "mean_s": sum(times) / len(times) if times else 0.0,
            "exit_code": result.exit_code,
            "wall_s": wall,
        }
        over = [i + 1 for i, t in enumerate(times) if budget_s and t > budget_s]
        print(
            f"{name:18s} mean={series[name]['mean_s'] * 1000:7.1f}ms "
            f"max={max(times) * 1000 if times else 0:7.1f}ms "
            f"mean_exp={sum(expansions) / max(1, len(expansions)):7.1f} "
            + (f"first-over-budget={over[0] if over else '-'}" if budget_s else "")
        )
    doc = {"model": model.name, "budget_s": budget_s, "series": series}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1))
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    model = load_model(args.model)
    cfg = _manager_config(args)
    rig, server = serve(
        model,
        listen=args.listen,
        seed=args.seed,
        scenario=_scenario_arg(args.scenario) if args.scenario else None,
        config=cfg,
        pace=args.pace,
    )
    print(f"console endpoints on http://{args.listen}  (GET /layout, POST /cmd, WS /ws)")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        print("shutting down")
        server.stop()
        rig.stop()
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sheetflow", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--model", required=True, help="machine model JSON path")
        if scenario_required:
            p.add_argument("--scenario", required=True, help="scenario text or @file")
        else:
            p.add_argument("--scenario", default=None, help="scenario text or @file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--w1", type=float, default=1.0)
        p.add_argument("--w2", type=float, default=0.0)
        p.add_argument("--policy", choices=("purge", "hold"), default="purge")

    p = sub.add_parser("plan", help="plan sheets offline and print the plans")
    common(p)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("run", help="full planner + controller-simulator loop")
    common(p)
    p.add_argument("--realtime", action="store_true", help="pace against the wall clock")
    p.add_argument("--trace", default=None, help="write the event trace (JSON lines)")
    p.add_argument("--metrics", default=None, help="write the metrics summary (JSON)")
    p.add_argument("--multi-table", action="store_true", dest="multi_table")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bench", help="per-sheet timing series and ablations")
    common(p)
    p.add_argument("--ablate-mutex", action="store_true", dest="ablate_mutex")
    p.add_argument("--multi-table", action="store_true", dest="multi_table")
    p.add_argument("--out", default=None, help="write the series document (JSON)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="live machine with the operator console")
    common(p, scenario_required=False)
    p.add_argument("--listen", default="127.0.0.1:8787")
    p.add_argument("--pace", type=float, default=1.0, help="virtual seconds per wall second")
    p.add_argument("--realtime", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("validate", help="model lint")
    p.add_argument("--model", required=True)
    p.set_defaults(fn=cmd_validate)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioSyntaxError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    except ModelError as e:
        print(f"model error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

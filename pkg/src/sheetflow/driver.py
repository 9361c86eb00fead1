"""Deterministic lock-step co-simulation of manager and machine.

Planner and simulator share one virtual clock. An episode consumes its
deterministic virtual planning duration; the simulator then catches up to the
same instant, delivering any completions or exceptions that fell inside the
window. Exceptions that arrive during an episode abort it (the sheet goes back
to the head of the queue via its snapshot) before being handled, matching the
interrupt-and-restart rule.

The same wiring runs threaded over TCP for the realtime/console path; only
this lock-step driver promises byte-identical traces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .manager import ManagerConfig, PlanManager, Status
from .model import MachineModel
from .protocol import LocalPipe
from .requests import SheetRequest
from .scenario import Scenario, build_requests
from .search import Objective
from .sim import Fault, MachineSim, ScheduleViolation
from .ticks import ms_to_ticks

EXCEPTION_KINDS = ("module_update", "break_in_future", "broken")


@dataclass
class RunResult:
    exit_code: int
    trace: list[dict]
    metrics: dict
    diagnostics: list[str] = field(default_factory=list)
    manager: PlanManager | None = None
    sim: MachineSim | None = None

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.trace:
                fh.write(json.dumps(ev, sort_keys=True, separators=(",", ":")) + "\n")

    def write_metrics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metrics, fh, indent=1, sort_keys=True)


class VirtualClock:
    def __init__(self) -> None:
        self.now = 0

    def __call__(self) -> int:
        return self.now

    def advance(self, delta: int) -> None:
        self.now += int(delta)


def make_rig(
    model: MachineModel,
    seed: int = 0,
    config: ManagerConfig | None = None,
    reject_prob: dict[str, float] | None = None,
) -> tuple[PlanManager, MachineSim, VirtualClock]:
    clock = VirtualClock()
    m_end, s_end = LocalPipe.pair()
    sim = MachineSim(model, s_end, seed=seed, reject_prob=reject_prob)
    manager = PlanManager(model, m_end, clock=clock, config=config)
    return manager, sim, clock


def run_scenario(
    model: MachineModel,
    scenario: Scenario,
    seed: int = 0,
    config: ManagerConfig | None = None,
    reject_prob: dict[str, float] | None = None,
    requests: list[SheetRequest] | None = None,
    max_cycles: int = 1_000_000,
) -> RunResult:
    config = config or ManagerConfig(
        objective=Objective(w1=scenario.w1, w2=scenario.w2), policy=scenario.policy
    )
    manager, sim, clock = make_rig(model, seed=seed, config=config, reject_prob=reject_prob)
    for req in requests if requests is not None else build_requests(scenario, model):
        manager.submit(req)
    for d in scenario.directives:
        at = ms_to_ticks(d.at_s * 1000)
        if d.kind == "jam":
            sim.inject(Fault(kind="jam", target=int(d.target)), at)
        else:
            sim.inject(Fault(kind="module", target=d.target, state=d.state or "off"), at)

    diagnostics: list[str] = []
    try:
        _loop(manager, sim, clock, max_cycles)
    except ScheduleViolation as e:
        diagnostics.append(f"schedule violation: {e}")

    diagnostics.extend(audit_run(manager, sim))
    metrics = compose_metrics(manager, sim)
    exit_code = 0 if not diagnostics else 1
    return RunResult(exit_code, sim.trace, metrics, diagnostics, manager, sim)


def _loop(manager: PlanManager, sim: MachineSim, clock: VirtualClock, max_cycles: int) -> None:
    """Fig. 6 outer loop with a периodic planned-queue checker.

    Planning episodes run back to back; the release check fires on a fixed
    period of virtual time (not after every episode), which is what lets a
    later sheet's episode push an earlier unsent plan around - the out-of-order
    launches. Garbage collection rides along with each release check.
    """
    period = manager.config.release_period
    next_check = period
    for _ in range(max_cycles):
        _drain_with_abort(manager, sim, clock, just_planned=None)
        if clock.now >= next_check:
            manager.release_due()
            manager.gc()
            next_check = (clock.now // period + 1) * period
        if manager.unplanned:
            record = manager.plan_next()
            spent = record.plan_virtual if record else manager.config.predict_floor
            clock.advance(spent)
            sim.step(clock.now)
            _drain_with_abort(manager, sim, clock, just_planned=record)
            continue
        # idle: advance to the next interesting instant
        next_ev = sim.next_event_time()
        pending = any(r.status is Status.PLANNED for r in manager.records.values())
        candidates = [t for t in (next_ev, next_check if pending else None) if t is not None]
        if not candidates:
            if not manager.unplanned:
                return
            continue
        clock.now = max(clock.now, min(candidates))
        sim.step(clock.now)
        _drain_with_abort(manager, sim, clock, just_planned=None)
        if (
            not manager.unplanned
            and sim.next_event_time() is None
            and not any(
                r.status in (Status.PLANNED, Status.SENT) for r in manager.records.values()
            )
        ):
            manager.gc()
            return
    raise RuntimeError("run did not terminate within the cycle budget")


def _drain_with_abort(manager: PlanManager, sim: MachineSim, clock: VirtualClock, just_planned) -> None:
    """Deliver pending controller messages; an exception aborts the episode
    that was in flight when it arrived."""
    msgs = manager._inbox_backlog + manager.conn.poll()
    manager._inbox_backlog = []
    if just_planned is not None and any(m.get("type") in EXCEPTION_KINDS for m in msgs):
        if manager.records.get(just_planned.seq) is just_planned and just_planned.status is Status.PLANNED:
            manager.rollback_to(just_planned.seq)
    for msg in msgs:
        before = len(manager.events)
        manager.handle_message(msg)
        for ev in manager.events[before:]:
            if ev.get("kind") == "replanned":
                clock.advance(ev["spent"])
                sim.step(clock.now)


def audit_run(manager: PlanManager, sim: MachineSim) -> list[str]:
    """End-of-run invariants: schedules, job integrity, release order, goals."""
    problems = list(sim.final_audit())

    failed = sorted(r.seq for r in manager.records.values() if r.status is Status.FAILED)
    if failed:
        problems.append(f"sheets failed without plans: {failed}")

    # job integrity: same finisher, completion order = submission order
    done_by_job: dict[str, list[int]] = {}
    finish_time: dict[int, int] = {}
    for ev in sim.trace:
        if ev["kind"] == "done":
            finish_time[ev["seq"]] = ev["t"]
    for seq in sorted(manager.records):
        rec = manager.records[seq]
        if rec.status is Status.DONE and not rec.purge:
            done_by_job.setdefault(rec.job, []).append(seq)
    for job, seqs in done_by_job.items():
        recs = [manager.records[s] for s in seqs]
        finishers = {r.finisher for r in recs}
        if len(finishers) > 1:
            problems.append(f"{job}: multiple finishers {finishers}")
        # submission order follows content lineage: a recreated sheet stands
        # in for the content of the sheet it replaces
        by_content = sorted(
            seqs, key=lambda s: manager.records[s].request.meta.get("recreates", s)
        )
        times = [finish_time.get(s) for s in by_content]
        if any(t is None for t in times):
            problems.append(f"{job}: done record without done event")
        elif times != sorted(times):
            problems.append(f"{job}: completion order differs from submission order")

    # sends strictly increasing by seq
    sent = [ev["seq"] for ev in sim.trace if ev["kind"] == "propose"]
    nominal = [s for s in sent if sent.count(s) == 1]
    if nominal != sorted(nominal):
        problems.append("plans released out of seq order")

    # every done sheet satisfies its goal's determinate literals
    from .logic import progress, satisfies
    from .search import make_goal_state

    for seq, rec in manager.records.items():
        if rec.status is not Status.DONE or not rec.steps:
            continue
        final = progress(rec.request.initial | manager.model.background, [s.action for s in rec.steps])
        if final is None:
            problems.append(f"sheet {seq}: committed plan not executable")
            continue
        goal_true = rec.request.goal
        if rec.finisher and not any(
            manager.model.vocab.name(l).startswith("Loc(") for l in goal_true
        ):
            goal_true = goal_true | {manager.model.location(rec.finisher)}
        goal = make_goal_state(manager.model, goal_true, rec.request.unknown)
        if not satisfies(final, goal):
            problems.append(f"sheet {seq}: final state misses its goal")
    return problems


def compose_metrics(manager: PlanManager, sim: MachineSim) -> dict:
    planning = [
        {
            "seq": r.seq,
            "wall_s": r.plan_wall_s,
            "virtual_ms": r.plan_virtual,
            "expansions": r.expansions,
        }
        for r in sorted(manager.records.values(), key=lambda r: r.seq)
        if r.status in (Status.DONE, Status.COMMITTED, Status.PLANNED)
    ]
    failed = [r.seq for r in manager.records.values() if r.status is Status.FAILED]
    m = sim.metrics()
    m.update(
        {
            "failed": failed,
            "planning": planning,
            "mean_plan_wall_s": (
                sum(p["wall_s"] for p in planning) / len(planning) if planning else 0.0
            ),
            "stn_points": manager.stn.num_points(),
        }
    )
    return m

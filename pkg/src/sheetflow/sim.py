"""Discrete-event machine-controller emulator.

Plays the controller side of the wire protocol on a virtual clock: negotiates
proposed plans step by step, executes committed actions at their clamped
times, reports completions, injects faults, and emits an append-only trace.
Everything is deterministic given (model, inputs, seed): event ties break on a
monotone counter and the only randomness is the seeded per-module reject
knob.

Execution is audited as it happens: two unit-capacity allocations overlapping
at commit time is a planner defect and aborts the run.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass

from .ledger import audit_intervals
from .model import MachineModel
from .ticks import ms_to_ticks, ticks_to_ms


class ScheduleViolation(Exception):
    pass


class UnknownTarget(Exception):
    pass


@dataclass
class SimStep:
    module: str
    capability: str
    action: str
    start: int
    end: int
    allocs: list[dict]
    to: str | None = None


@dataclass
class SimPlan:
    seq: int
    job: str
    steps: list[SimStep]
    purge: bool = False
    gen: int = 0
    status: str = "committed"  # committed | done | lost
    frozen_at: tuple[str, float] | None = None  # jam position for the console


@dataclass
class Fault:
    kind: str  # "module" | "jam"
    target: str | int
    state: str = "off"


class MachineSim:
    def __init__(self, model: MachineModel, conn, seed: int = 0, reject_prob: dict[str, float] | None = None) -> None:
        self.model = model
        self.conn = conn
        self.rng = random.Random(seed)
        self.reject_prob = reject_prob or {}
        self.clock = 0
        self.module_on = {m: True for m in model.modules}
        self.plans: dict[int, SimPlan] = {}
        self.trace: list[dict] = []
        self._events: list[tuple[int, int, str, dict]] = []
        self._order = itertools.count()
        self._alloc_log: dict[str, list[tuple[float, float, str | None, int, int]]] = {}
        self.first_commit: int | None = None
        self.last_done: int | None = None
        self.counts = {"done": 0, "purged": 0, "lost": 0, "rejected": 0}
        if hasattr(conn, "handler"):
            conn.handler = self.on_message

    # -- event plumbing ------------------------------------------------------

    def _emit(self, kind: str, **payload) -> None:
        self.trace.append({"t": self.clock, "kind": kind, **payload})

    def _schedule(self, at: int, kind: str, payload: dict) -> None:
        heapq.heappush(self._events, (int(at), next(self._order), kind, payload))

    def step(self, until: int) -> list[dict]:
        """Process queued events up to and including `until`."""
        emitted_from = len(self.trace)
        while self._events and self._events[0][0] <= until:
            at, _, kind, payload = heapq.heappop(self._events)
            self.clock = max(self.clock, at)
            self._dispatch(kind, payload)
        self.clock = max(self.clock, until)
        return self.trace[emitted_from:]

    def next_event_time(self) -> int | None:
        return self._events[0][0] if self._events else None

    def _dispatch(self, kind: str, payload: dict) -> None:
        plan = self.plans.get(payload.get("seq", -1))
        if kind in ("action-start", "action-end", "done"):
            if plan is None or payload["gen"] != plan.gen or plan.status == "lost":
                return  # superseded or jammed plan
        if kind == "action-start":
            step = plan.steps[payload["step"]]
            if not self.module_on.get(step.module, False):
                # the sheet runs into a dead module: secondary jam
                self._emit("fault", fault="jam", seq=plan.seq, module=step.module, note="cascade")
                self._mark_lost([plan.seq])
                self.conn.send(
                    {"type": "broken", "jammed_seqs": [plan.seq], "module_updates": []}
                )
                return
            self._emit("action-start", seq=plan.seq, step=payload["step"], module=step.module, action=step.action)
        elif kind == "action-end":
            step = plan.steps[payload["step"]]
            self._emit("action-end", seq=plan.seq, step=payload["step"], module=step.module)
        elif kind == "done":
            plan.status = "done"
            self.counts["done"] += 1
            self.last_done = self.clock
            last = plan.steps[-1] if plan.steps else None
            dest = (last.to or last.module) if last else None
            purged = plan.purge or (
                dest in self.model.modules and self.model.modules[dest].kind == "purge"
            )
            if purged:
                self.counts["purged"] += 1
                self._emit("purged", seq=plan.seq, module=dest)
            self._emit("done", seq=plan.seq, module=dest)
            self.conn.send({"type": "done", "seq": plan.seq})
        elif kind == "fault":
            self._apply_fault(Fault(**payload["fault"]))

    # -- negotiation -----------------------------------------------------------

    def on_message(self, msg: dict) -> None:
        if msg.get("type") == "propose":
            self._negotiate(msg)

    def _negotiate(self, msg: dict) -> None:
        seq = msg["seq"]
        self._emit("propose", seq=seq, steps=len(msg["steps"]))
        steps = [
            SimStep(
                module=s["module"],
                capability=s["capability"],
                action=s.get("action", s["capability"]),
                start=ms_to_ticks(s["start_ms"]),
                end=ms_to_ticks(s["end_ms"]),
                allocs=s.get("allocs", []),
                to=s.get("to"),
            )
            for s in msg["steps"]
        ]
        for i, s in enumerate(steps):
            off = not self.module_on.get(s.module, False)
            flaky = self.rng.random() < self.reject_prob.get(s.module, 0.0)
            if off or flaky:
                reason = "module off" if off else "module declined"
                self.counts["rejected"] += 1
                self._emit("reject", seq=seq, step=i, reason=reason)
                self.conn.send({"type": "reject", "seq": seq, "step": i, "reason": reason})
                return
            self._emit("accept", seq=seq, step=i)
            self.conn.send({"type": "accept", "seq": seq, "step": i})
        old = self.plans.get(seq)
        gen = old.gen + 1 if old else 0
        boundary = steps[0].start if steps else self.clock
        if old is not None:
            old.steps = [s for s in old.steps if s.end <= boundary]
        plan = SimPlan(seq=seq, job=msg.get("job", ""), steps=(old.steps + steps) if old else steps, purge=bool(msg.get("purge")), gen=gen)
        self.plans[seq] = plan
        self._audit_commit(plan, steps, boundary)
        base_index = len(plan.steps) - len(steps)
        for i, s in enumerate(steps):
            self._schedule(s.start, "action-start", {"seq": seq, "step": base_index + i, "gen": gen})
            self._schedule(s.end, "action-end", {"seq": seq, "step": base_index + i, "gen": gen})
        if steps:
            self._schedule(steps[-1].end, "done", {"seq": seq, "gen": gen})
        if self.first_commit is None:
            self.first_commit = self.clock
        self._emit("commit", seq=seq)
        self.conn.send({"type": "commit", "seq": seq})

    def _audit_commit(self, plan: SimPlan, new_steps: list[SimStep], boundary: int) -> None:
        """Committed allocations must satisfy every resource kind's semantics."""
        for res, log in self._alloc_log.items():
            self._alloc_log[res] = [
                row for row in log if not (row[3] == plan.seq and row[0] >= boundary)
            ]
        for i, step in enumerate(new_steps):
            for al in step.allocs:
                res = al["res"]
                row = (
                    ms_to_ticks(al["start_ms"]),
                    ms_to_ticks(al["end_ms"]),
                    al.get("state"),
                    plan.seq,
                    plan.gen,
                )
                self._alloc_log.setdefault(res, []).append(row)
        for res in {al["res"] for s in new_steps for al in s.allocs}:
            kind = self.model.resources[res]
            intervals = [(r[0], r[1], r[2]) for r in self._alloc_log[res]]
            bad = audit_intervals(kind, intervals)
            if bad:
                self._emit("schedule-violation", res=res, detail=bad[0])
                raise ScheduleViolation(f"{res}: {bad[0]}")

    # -- faults ------------------------------------------------------------------

    def inject(self, fault: Fault, at: int) -> None:
        if fault.kind == "module" and fault.target not in self.model.modules:
            raise UnknownTarget(str(fault.target))
        if fault.kind == "jam" and not isinstance(fault.target, int):
            raise UnknownTarget(str(fault.target))
        self._schedule(at, "fault", {"fault": fault.__dict__})

    def _apply_fault(self, fault: Fault) -> None:
        if fault.kind == "module":
            self._toggle_module(str(fault.target), fault.state)
        elif fault.kind == "jam":
            self._jam_sheet(int(fault.target))

    def _module_updates(self, module: str, state: str) -> list[dict]:
        out = []
        for a in self.model.actions:
            cap = a.capability
            if a.module == module and all(u["capability"] != cap for u in out):
                out.append({"type": "module_update", "capability": cap, "state": state})
        return out

    def _toggle_module(self, module: str, state: str) -> None:
        self.module_on[module] = state == "on"
        self._emit("fault", fault="module", module=module, state=state)
        updates = self._module_updates(module, state)
        for u in updates:
            self.conn.send(u)
        if state == "on":
            return
        jammed, later = [], []
        for plan in self.plans.values():
            if plan.status != "committed":
                continue
            for step in plan.steps:
                if step.module != module:
                    continue
                if step.start <= self.clock < step.end:
                    jammed.append(plan.seq)
                elif step.start > self.clock:
                    later.append(plan.seq)
        if jammed:
            self._mark_lost(jammed)
            self.conn.send(
                {
                    "type": "broken",
                    "jammed_seqs": sorted(set(jammed)),
                    "module_updates": [
                        {"capability": u["capability"], "state": "off"} for u in updates
                    ],
                }
            )
        elif later:
            self.conn.send({"type": "break_in_future", "seqs": sorted(set(later)), "module_updates": []})

    def _jam_sheet(self, seq: int) -> None:
        plan = self.plans.get(seq)
        if plan is None or plan.status != "committed":
            self._emit("fault", fault="jam", seq=seq, note="sheet not in flight")
            return
        module = None
        for step in plan.steps:
            if step.start <= self.clock < step.end:
                module = step.module
                break
        if module is None:
            self._emit("fault", fault="jam", seq=seq, note="sheet not in contact")
            return
        self._emit("fault", fault="jam", seq=seq, module=module)
        self.module_on[module] = False
        updates = self._module_updates(module, "off")
        for u in updates:
            self.conn.send(u)
        jammed = [seq]
        for other in self.plans.values():
            if other.status != "committed" or other.seq == seq:
                continue
            for step in other.steps:
                if step.module == module and step.start <= self.clock < step.end:
                    jammed.append(other.seq)
        self._mark_lost(jammed)
        self.conn.send(
            {
                "type": "broken",
                "jammed_seqs": sorted(set(jammed)),
                "module_updates": [
                    {"capability": u["capability"], "state": "off"} for u in updates
                ],
            }
        )

    def _mark_lost(self, seqs: list[int]) -> None:
        for seq in seqs:
            plan = self.plans[seq]
            plan.status = "lost"
            plan.frozen_at = self._position_of(plan, self.clock)
            self.counts["lost"] += 1
            self._emit("lost", seq=seq)
            # the sheet now blocks its module; future allocations it held vanish
            for res, log in self._alloc_log.items():
                self._alloc_log[res] = [
                    r for r in log if not (r[3] == seq and r[0] > self.clock)
                ]

    # -- views -------------------------------------------------------------------

    def _position_of(self, plan: SimPlan, at: float) -> tuple[str, float] | None:
        for step in plan.steps:
            if step.start <= at < step.end:
                frac = (at - step.start) / (step.end - step.start) if step.end > step.start else 1.0
                return step.module, frac
            if at < step.start:
                return step.module, 0.0
        return None

    def positions(self, at: float | None = None) -> dict[int, tuple[str, float]]:
        """Per-sheet (module, fractional progress) by linear interpolation."""
        at = self.clock if at is None else at
        out = {}
        for seq, plan in self.plans.items():
            if plan.status == "done":
                continue
            if plan.status == "lost":
                if plan.frozen_at:
                    out[seq] = plan.frozen_at
                continue
            if not plan.steps or at < plan.steps[0].start or at >= plan.steps[-1].end:
                continue
            pos = self._position_of(plan, at)
            if pos:
                out[seq] = pos
        return out

    def final_audit(self) -> list[str]:
        bad = []
        for res, log in self._alloc_log.items():
            kind = self.model.resources[res]
            live = [
                (r[0], r[1], r[2])
                for r in log
                if self.plans.get(r[3]) and self.plans[r[3]].status != "lost"
            ]
            for msg in audit_intervals(kind, live):
                bad.append(f"{res}: {msg}")
        return bad

    def metrics(self) -> dict:
        makespan = 0.0
        if self.first_commit is not None and self.last_done is not None:
            makespan = ticks_to_ms(self.last_done - self.first_commit)
        minutes = makespan / 60_000 if makespan else 0.0
        return {
            "makespan_ms": makespan,
            "throughput_ppm": (self.counts["done"] - self.counts["purged"]) / minutes if minutes else 0.0,
            **self.counts,
        }

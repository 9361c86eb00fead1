"""Plan life-cycle orchestration.

The manager owns all mutable planning state: the shared temporal network, the
resource ledger, the job/finisher table, the queues, and per-sheet snapshots
for rollback. Sheets are planned strictly FIFO, one episode at a time; between
episodes it releases imminent plans (clamping their time points oldest-first),
negotiates them with the controller, and garbage-collects the network.

Snapshots are cheap: a fork of the network and ledger plus a copy of the job
table, taken before each episode. Rolling back restores them and re-posts the
clamp constraints of plans that were already sent, which stay immutable.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

from .graph import HeuristicConfig
from .ledger import Ledger, cyclic_kinds
from .model import GroundAction, MachineModel
from .requests import SheetRequest
from .search import (
    EpisodeClock,
    Interrupted,
    NoPlan,
    Objective,
    PlanContext,
    PlanResult,
    PlannedStep,
    PlanningTimePredictor,
    plan_sheet,
)
from .stn import Stn, TimePointId, window
from .ticks import INF, ticks_to_ms

MAX_ATTEMPTS = 3


class Status(Enum):
    UNPLANNED = "unplanned"
    PLANNED = "planned"
    SENT = "sent"
    COMMITTED = "committed"
    DONE = "done"
    CANCELLED = "cancelled"
    LOST = "lost"
    FAILED = "failed"


@dataclass
class PlanRecord:
    seq: int
    job: str
    request: SheetRequest
    steps: list[PlannedStep]
    finisher: str | None
    t6: TimePointId
    status: Status = Status.PLANNED
    purge: bool = False
    attempt: int = 1
    clamped: dict[TimePointId, float] = field(default_factory=dict)
    end_time: float = 0.0
    expansions: int = 0
    plan_wall_s: float = 0.0
    plan_virtual: int = 0

    def start_point(self) -> TimePointId:
        return self.steps[0].start if self.steps else self.t6

    def start_time(self, stn: Stn) -> float:
        return stn.earliest(self.start_point())


@dataclass
class JobInfo:
    finisher: str | None = None
    last_end: TimePointId | None = None
    last_engine: str | None = None
    submitted: int = 0
    completed: int = 0


@dataclass
class Snapshot:
    seq: int
    stn: Stn
    ledger: Ledger
    jobs: dict[str, JobInfo]


@dataclass
class ManagerConfig:
    objective: Objective = field(default_factory=Objective)
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    multi_table: bool = False
    node_limit: int = 200_000
    predict_floor: int = 50
    delta_e_max: float | None = None
    policy: str = "purge"  # purge | hold
    cyclic_horizon_factor: float = 10.0
    virtual_node_cost_us: int = 200  # deterministic stand-in for per-node CPU cost
    use_wall_time: bool = False  # realtime mode: predictor tracks wall clock
    release_period: int = 300  # ticks between planned-queue release checks
    append_only: bool = False  # greedy baseline: new allocations only after existing ones
    constrained_heuristic: bool = True  # False: naive unconstrained-heuristic baseline


class PlanManager:
    def __init__(
        self,
        model: MachineModel,
        conn,
        clock=None,
        config: ManagerConfig | None = None,
    ) -> None:
        self.model = model
        self.conn = conn
        self.config = config or ManagerConfig()
        self.clock = clock or (lambda: int(time.monotonic() * 1000))
        self.stn = Stn()
        self.t7: TimePointId = self.stn.add_point()
        self.ledger = Ledger()
        self.jobs: dict[str, JobInfo] = {}
        self.records: dict[int, PlanRecord] = {}
        self.unplanned: deque[SheetRequest] = deque()
        self.snapshots: dict[int, Snapshot] = {}
        self.predictor = PlanningTimePredictor(floor=self.config.predict_floor)
        self.disabled_capabilities: set[str] = set()
        self.events: list[dict] = []
        self.failed: list[int] = []
        self.longest_makespan: int = 1000
        self._inbox_backlog: list[dict] = []
        self._requeue_attempts: dict[int, int] = {}
        self._seed_cyclic()

    # -- intake --------------------------------------------------------------

    def submit(self, request: SheetRequest) -> None:
        job = self.jobs.setdefault(request.job, JobInfo())
        job.submitted += 1
        self._max_seq = max(getattr(self, "_max_seq", 0), request.seq)
        self.unplanned.append(request)

    def next_regen_seq(self) -> int:
        self._max_seq = max(getattr(self, "_max_seq", 0), max(self.records, default=0)) + 1
        return self._max_seq

    def renumber_queue(self) -> None:
        """Fresh strictly-increasing seqs for everything still unplanned.

        After an exception reshuffles the queue (recreated content at the
        head, cancelled sheets behind it), the old seq numbers would violate
        the controller's released-in-order contract; content lineage rides
        along in the request metadata.
        """
        fresh = []
        for req in self.unplanned:
            new_seq = self.next_regen_seq()
            meta = dict(req.meta)
            meta["recreates"] = meta.get("recreates", req.seq)
            if req.seq in self._requeue_attempts:
                self._requeue_attempts[new_seq] = self._requeue_attempts.pop(req.seq)
            fresh.append(
                SheetRequest(
                    seq=new_seq,
                    job=req.job,
                    initial=req.initial,
                    goal=req.goal,
                    unknown=req.unknown,
                    meta=meta,
                )
            )
        self.unplanned.clear()
        self.unplanned.extend(fresh)

    def requeue_front(self, requests: list[SheetRequest]) -> None:
        for req in reversed(requests):
            self.unplanned.appendleft(req)

    # -- episode -------------------------------------------------------------

    def soon_horizon(self) -> int:
        return 2 * self.predictor.predict() + self.model.t_delay

    def episode_actions(self, request: SheetRequest) -> tuple[list[GroundAction], frozenset[int]]:
        """Active action set plus per-sheet removed ids (delta-E / quality)."""
        actions = [
            a for a in self.model.actions if a.capability not in self.disabled_capabilities
        ]
        removed: set[int] = set()
        allowed_engines = None
        if "engines" in request.meta:
            allowed_engines = set(request.meta["engines"])
        de_max = request.meta.get("delta_e_max", self.config.delta_e_max)
        job = self.jobs.get(request.job)
        if de_max is not None and job is not None and job.last_engine and self.model.delta_e:
            ball = {
                e
                for e in self.model.engines()
                if self.model.delta_e_of(e, job.last_engine) <= de_max
            }
            allowed_engines = ball if allowed_engines is None else (allowed_engines & ball)
        if allowed_engines is not None:
            removed |= {
                a.id for a in actions if a.is_print and a.module not in allowed_engines
            }
        return actions, frozenset(removed)

    def eligible_finishers(self, request: SheetRequest) -> list[str]:
        job = self.jobs.get(request.job)
        if job is not None and job.finisher:
            return [job.finisher]
        taken = {
            info.finisher
            for j, info in self.jobs.items()
            if j != request.job and info.finisher and info.completed < info.submitted
        }
        return [f for f in self.model.finishers() if f not in taken]

    def build_context(self, request: SheetRequest, **overrides) -> PlanContext:
        now = self.clock()
        actions, removed = self.episode_actions(request)
        job = self.jobs.get(request.job)
        t5 = job.last_end if job else None
        if request.meta.get("no_chain"):
            t5 = None
        # the earliest-start anchor covers planning time, controller latency,
        # and the wait until the next release-checker pass
        t2 = now + self.predictor.predict() + self.model.t_delay + self.config.release_period
        ctx = PlanContext(
            model=self.model,
            actions=actions,
            stn=self.stn,
            ledger=self.ledger,
            clock=EpisodeClock(t1=now, t2=t2, t7=self.t7),
            objective=self.config.objective,
            t5=t5,
            eligible_finishers=self.eligible_finishers(request),
            removed=removed,
            heuristic=self.config.heuristic,
            multi_table=self.config.multi_table,
            node_limit=self.config.node_limit,
            append_only=self.config.append_only,
            constrained_heuristic=self.config.constrained_heuristic,
        )
        if "max_end" in request.meta:
            ctx.max_end = int(request.meta["max_end"])
        if self.config.multi_table and removed:
            # print-capability constraints key the exact allowed subset; the
            # size-m subset formula only kicks in for other removal kinds
            ctx.table_m = len(removed)
        for k, v in overrides.items():
            setattr(ctx, k, v)
        return ctx

    def plan_next(self) -> PlanRecord | None:
        """One planning episode: pop, snapshot, plan, record."""
        if not self.unplanned:
            return None
        request = self.unplanned.popleft()
        self._refresh_cyclic()
        self.snapshots[request.seq] = Snapshot(
            request.seq,
            self.stn,
            self.ledger.fork(),
            {j: replace(i) for j, i in self.jobs.items()},
        )
        ctx = self.build_context(request)
        t_start = time.perf_counter()
        try:
            result = plan_sheet(request, ctx)
        except NoPlan:
            retried = self._retry_with_wider_horizon(request)
            if retried is not None:
                return retried
            self.snapshots.pop(request.seq, None)
            self._fail_sheet(request, "no plan")
            return None
        except Interrupted:
            self.snapshots.pop(request.seq, None)
            self.unplanned.appendleft(request)
            self.events.append({"kind": "interrupted", "seq": request.seq})
            return None
        wall = time.perf_counter() - t_start
        return self.adopt(request, result, wall)

    def _retry_with_wider_horizon(self, request: SheetRequest) -> PlanRecord | None:
        cyc = cyclic_kinds(self.model)
        if not cyc:
            return None
        for res, kind in cyc.items():
            horizon = self.ledger.cyclic_horizon.get(res, 0) * 2 or self.clock() + 10_000
            self.ledger.seed_cyclic(res, kind, horizon, self.stn)
        ctx = self.build_context(request)
        try:
            result = plan_sheet(request, ctx)
        except (NoPlan, Interrupted):
            self._fail_sheet(request, "no plan after horizon extension")
            return None
        return self.adopt(request, result, 0.0)

    def adopt(self, request: SheetRequest, result: PlanResult, wall: float = 0.0) -> PlanRecord:
        """Commit an episode's outcome as the new planning context."""
        self.stn = result.stn
        self.ledger = result.ledger
        record = PlanRecord(
            seq=request.seq,
            job=request.job,
            request=request,
            steps=result.steps,
            finisher=result.finisher,
            t6=result.t6,
            attempt=self._requeue_attempts.pop(request.seq, 1),
            expansions=result.expansions,
            plan_wall_s=wall,
            plan_virtual=max(
                self.config.predict_floor,
                result.expansions * self.config.virtual_node_cost_us // 1000,
            ),
        )
        # the predictor sees the same planning-latency currency used to place
        # t2: deterministic virtual time by default, wall time in --realtime
        self.predictor.observe(
            wall * 1000 if getattr(self.config, "use_wall_time", False) else record.plan_virtual
        )
        self.records[request.seq] = record
        job = self.jobs.setdefault(request.job, JobInfo())
        if job.finisher is None and not record.purge:
            job.finisher = result.finisher
        if not request.meta.get("no_chain"):
            job.last_end = result.t6
        last_engine = None
        for step in result.steps:
            if step.action.is_print:
                last_engine = step.action.module
        if last_engine:
            job.last_engine = last_engine
        makespan = int(result.end_time - self.stn.earliest(result.steps[0].start)) if result.steps else 0
        self.longest_makespan = max(self.longest_makespan, makespan)
        self.events.append(
            {"kind": "planned", "seq": request.seq, "end": result.end_time, "expansions": result.expansions}
        )
        return record

    def _fail_sheet(self, request: SheetRequest, reason: str) -> None:
        self.failed.append(request.seq)
        self.records[request.seq] = PlanRecord(
            seq=request.seq,
            job=request.job,
            request=request,
            steps=[],
            finisher=None,
            t6=-1,
            status=Status.FAILED,
        )
        self.events.append({"kind": "failed", "seq": request.seq, "reason": reason})

    # -- release -------------------------------------------------------------

    def due_for_release(self) -> list[PlanRecord]:
        now = self.clock()
        horizon = now + self.soon_horizon()
        # a tightly wedged plan (finite start window) must go out before
        # waiting another checker period could starve it
        deadline = now + self.config.release_period + self.soon_horizon()
        planned = [r for r in self.records.values() if r.status is Status.PLANNED]
        if not planned:
            return []
        imminent = [
            r
            for r in planned
            if r.start_time(self.stn) <= horizon
            or (r.steps and self.stn.latest(r.steps[0].start) <= deadline)
        ]
        if not imminent:
            return []
        max_seq = max(r.seq for r in imminent)
        return sorted((r for r in planned if r.seq <= max_seq), key=lambda r: r.seq)

    def release_due(self) -> list[int]:
        """Clamp and send every due plan, oldest first.

        Issue-time constraints for the whole batch are posted before any
        clamping so a joint schedule shifts as one piece; the batch then
        clamps and sends in seq order.
        """
        due = self.due_for_release()
        if not due:
            return []
        now = self.clock()
        for record in due:
            if not self._post_issue_constraint(record, now):
                # the plan went stale waiting in the queue (a slot it chose has
                # passed); replan it and everything after it, and release the
                # rest on the next check against the restored network
                self.rollback_to(record.seq)
                return []
        for record in due:
            self._clamp_record(record, now)
        released = []
        for record in due:
            if self._send_record(record):
                released.append(record.seq)
            else:
                break  # rejection rolled the rest back
        return released

    def _post_issue_constraint(self, record: PlanRecord, now: int) -> bool:
        if not record.steps:
            return True
        # the first action may not begin sooner than t_delay after issue
        return bool(
            self.stn.add_constraint(
                window(record.steps[0].start, now + self.model.t_delay, INF)
            )
        )

    def _clamp_record(self, record: PlanRecord, now: int) -> None:
        points = []
        for step in record.steps:
            points.append(step.start)
            points.append(step.end)
        points.sort(key=lambda p: (self.stn.earliest(p), p))
        for p in points:
            verdict = self.stn.clamp(p)
            assert verdict, "clamping a consistent network must stay consistent"
        record.clamped = {p: self.stn.earliest(p) for p in points}
        record.end_time = self.stn.earliest(record.t6)
        assert record.start_time(self.stn) >= now, "released plan starts in the past"
        self.ledger.freeze_owner(record.seq, self.stn)

    def release(self, record: PlanRecord) -> bool:
        """Single-plan release path (replacement plans during recovery)."""
        now = self.clock()
        self._post_issue_constraint(record, now)
        self._clamp_record(record, now)
        return self._send_record(record)

    def _send_record(self, record: PlanRecord) -> bool:
        from .model import _action_to_location

        steps_payload = []
        for step in record.steps:
            s = self.stn.earliest(step.start)
            e = self.stn.earliest(step.end)
            steps_payload.append(
                {
                    "module": step.action.module,
                    "capability": step.action.capability,
                    "action": step.action.name,
                    "to": _action_to_location(self.model, step.action),
                    "start_ms": ticks_to_ms(int(s)),
                    "end_ms": ticks_to_ms(int(e)),
                    "allocs": [
                        {
                            "res": spec.res,
                            "start_ms": ticks_to_ms(int(s + spec.offset)),
                            "end_ms": ticks_to_ms(int(e if spec.span else s + spec.offset + spec.dur)),
                            **({"state": spec.state_label} if spec.state_label else {}),
                        }
                        for spec in step.action.allocs
                    ],
                }
            )
        record.status = Status.SENT
        self.conn.send(
            {"type": "propose", "seq": record.seq, "job": record.job, "purge": record.purge, "steps": steps_payload}
        )
        return self._await_negotiation(record)

    def _await_negotiation(self, record: PlanRecord) -> bool:
        for spin in range(100_000):
            if spin > 0:
                time.sleep(0.001)  # TCP path; the in-process pipe answers on spin 0
            for msg in self.conn.poll():
                kind = msg.get("type")
                if kind == "accept" and msg.get("seq") == record.seq:
                    continue
                if kind == "commit" and msg.get("seq") == record.seq:
                    record.status = Status.COMMITTED
                    self.snapshots.pop(record.seq, None)
                    self.events.append({"kind": "released", "seq": record.seq})
                    return True
                if kind == "reject" and msg.get("seq") == record.seq:
                    self.events.append({"kind": "rejected", "seq": record.seq, "reason": msg.get("reason")})
                    self.handle_reject(record)
                    return False
                self._inbox_backlog.append(msg)
        raise TimeoutError(f"no commit/reject for seq {record.seq}")

    # -- rollback ------------------------------------------------------------

    def handle_reject(self, record: PlanRecord) -> None:
        record.status = Status.CANCELLED
        self.rollback_to(record.seq)

    def rollback_to(self, seq: int) -> None:
        snap = self.snapshots.get(seq)
        if snap is None:
            raise KeyError(f"no snapshot for seq {seq}")
        requeue: list[SheetRequest] = []
        for s in sorted(self.records):
            if s < seq:
                continue
            rec = self.records[s]
            if rec.status in (Status.PLANNED, Status.SENT, Status.CANCELLED):
                rec.status = Status.CANCELLED
                if rec.attempt >= MAX_ATTEMPTS:
                    self._fail_sheet(rec.request, "too many attempts")
                else:
                    requeue.append(rec.request)
                    del self.records[s]
                    self._requeue_attempts[rec.request.seq] = rec.attempt + 1
        self.stn = snap.stn
        self.ledger = snap.ledger.fork()
        self.jobs = {j: replace(i) for j, i in snap.jobs.items()}
        # sent plans stay frozen: re-post their clamps on the restored network.
        # Done plans are history - their points may have been collected and
        # their ids reused, so only active commitments are re-pinned.
        for rec in self.records.values():
            if rec.status is Status.COMMITTED and rec.clamped:
                for p, v in rec.clamped.items():
                    verdict = self.stn.add_constraint(window(p, v, v))
                    assert verdict, f"re-clamp failed for committed seq {rec.seq}"
        for s in [k for k in self.snapshots if k >= seq]:
            del self.snapshots[s]
        self.requeue_front(requeue)
        self.events.append({"kind": "rollback", "to": seq, "requeued": [r.seq for r in requeue]})

    # -- inbound -------------------------------------------------------------

    def handle_message(self, msg: dict) -> None:
        kind = msg.get("type")
        if kind == "done":
            rec = self.records.get(msg["seq"])
            if rec and rec.status is not Status.DONE:
                rec.status = Status.DONE
                job = self.jobs.get(rec.job)
                if job:
                    job.completed += 1
        elif kind in ("module_update", "break_in_future", "broken"):
            from .recovery import handle_exception

            handle_exception(self, msg)

    def drain_inbox(self) -> None:
        msgs = self._inbox_backlog + self.conn.poll()
        self._inbox_backlog = []
        for msg in msgs:
            self.handle_message(msg)

    # -- housekeeping ----------------------------------------------------------

    def _seed_cyclic(self) -> None:
        for res, kind in cyclic_kinds(self.model).items():
            horizon = max(
                self.clock() + self.config.cyclic_horizon_factor * self.longest_makespan,
                kind.period * 4,
            )
            self.ledger.seed_cyclic(res, kind, horizon, self.stn)

    def _refresh_cyclic(self) -> None:
        for res, kind in cyclic_kinds(self.model).items():
            want = self.clock() + self.config.cyclic_horizon_factor * self.longest_makespan
            if self.ledger.cyclic_horizon.get(res, 0) < want:
                self.ledger.seed_cyclic(res, kind, want, self.stn)

    def update_delta_e(self, matrix: dict) -> None:
        """Swap in a drifted distance matrix; takes effect at the next episode."""
        self.model = self.model.with_delta_e(matrix)

    def gc(self) -> int:
        """Mark-and-sweep between episodes; live set from active plans."""
        horizon = self.clock()
        done_seqs = {
            r.seq for r in self.records.values() if r.status in (Status.DONE, Status.CANCELLED, Status.LOST)
        }
        self.ledger.remove_if(lambda a: a.owner[0] in done_seqs)
        live: set[TimePointId] = {self.t7}
        for rec in self.records.values():
            if rec.status in (Status.DONE, Status.CANCELLED, Status.LOST, Status.FAILED):
                continue
            for step in rec.steps:
                live.add(step.start)
                live.add(step.end)
            if rec.t6 >= 0:
                live.add(rec.t6)
        for job in self.jobs.values():
            if job.last_end is not None and job.completed < job.submitted:
                live.add(job.last_end)
        live |= self.ledger.live_points()
        return self.stn.collect_garbage(horizon, live)

    # -- threaded loop ---------------------------------------------------------

    def run_loop(self, stop=lambda: False) -> None:
        """Process events until stopped: plan, release, collect garbage."""
        while not stop():
            self.drain_inbox()
            made = self.plan_next()
            self.release_due()
            self.gc()
            if made is None and not self.unplanned:
                time.sleep(0.005)

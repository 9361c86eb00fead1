"""Exception handling: rejections, module updates, future breaks, and jams.

Simple exceptions roll recently made plans back to the unplanned queue. Jams
and disabled modules additionally require fresh plans for sheets already
moving through the machine: those cannot stop, so each one is projected along
its committed trajectory to where it will be once replanning finishes, and a
joint plan for all affected sheets is found by chaining per-sheet best-first
searches depth-first (backtracking into earlier sheets' alternative plans when
a later sheet becomes infeasible). Replacement plans supersede the committed
ones from the projection boundary onward.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .graph import PlanningGraph
from .logic import progress
from .manager import PlanManager, PlanRecord, Status
from .requests import SheetRequest
from .search import Interrupted, NoPlan, Objective, PlanResult, PlanSearch
from .stn import TimePointId
from .ticks import INF

REPLAN_NODE_LIMIT = 10_000
REPLAN_FLOOR = 200  # ticks; lower bound on the replanning-time budget


class AlreadyLost(Exception):
    pass


@dataclass
class ReplanProblem:
    record: PlanRecord
    request: SheetRequest  # goal rewritten per policy
    initial: frozenset[int]
    fixed_start: int
    purge: bool = False
    min_end: int | None = None
    max_end: int | None = None
    chain_job_order: bool = True


@dataclass
class ReplanOutcome:
    solved: list[int] = field(default_factory=list)
    unsalvageable: list[int] = field(default_factory=list)
    lost: list[int] = field(default_factory=list)
    regenerated: list[int] = field(default_factory=list)
    originals: dict[int, SheetRequest] = field(default_factory=dict)
    budget: int = 0
    spent: int = 0
    expansions: int = 0


def replan_budget(manager: PlanManager) -> int:
    """Upper bound on replanning time used for trajectory projection."""
    return max(REPLAN_FLOOR, 4 * manager.predictor.predict())


# -- projection ---------------------------------------------------------------


def project(
    manager: PlanManager, record: PlanRecord, t_proj: float
) -> tuple[frozenset[int], int]:
    """Sheet state and position at time t_proj along the committed timeline.

    Returns (complete state at the next action boundary >= t_proj, boundary
    time). Raises AlreadyLost when the sheet meets a disabled capability
    before it can be diverted.
    """
    stn = manager.stn
    initial = record.request.initial | manager.model.background
    state = initial
    disabled = manager.disabled_capabilities
    boundary = int(t_proj)
    for step in record.steps:
        start = stn.earliest(step.start)
        end = stn.earliest(step.end)
        if start >= t_proj:
            break
        # this action begins before the diversion can take effect
        if step.action.capability in disabled:
            raise AlreadyLost(f"sheet {record.seq} reaches {step.action.module} first")
        nxt = progress(state, [step.action])
        if nxt is None:
            raise AlreadyLost(f"sheet {record.seq} trajectory inconsistent")
        state = nxt
        boundary = int(end)
    boundary = max(boundary, int(t_proj))
    return state, boundary


# -- goal rewriting -------------------------------------------------------------


def regoal(
    manager: PlanManager, record: PlanRecord, policy: str
) -> tuple[frozenset[int], bool, int | None]:
    """New goal for an in-flight sheet behind a jammed one.

    Purge: route to a purge tray, job order dropped. Hold: keep the original
    finisher but end no earlier than an admissible estimate of the recreated
    predecessor's end, so the sheet loops inside the machine while the lost
    content is reprinted.
    """
    model = manager.model
    vocab = model.vocab
    goal = record.request.goal
    if policy == "purge":
        trays = model.purge_trays() or model.finishers()
        new_goal = frozenset(
            l for l in goal if not vocab.name(l).startswith("Loc(")
        ) | {model.location(trays[0])}
        return new_goal, True, None
    # hold: same goal; lower-bound the end by the recreated predecessor
    now = manager.clock()
    budget = replan_budget(manager)
    actions = [a for a in model.actions if a.capability not in manager.disabled_capabilities]
    graph = PlanningGraph(
        actions, record.request.initial | model.background, len(vocab)
    )
    d = graph.estimate(frozenset(l for l in goal))
    min_end = int(now + budget + (0 if d == INF else d))
    return goal, False, min_end


# -- chained best-first search -------------------------------------------------


def chained_bfs(
    manager: PlanManager,
    problems: list[ReplanProblem],
    node_limit: int = REPLAN_NODE_LIMIT,
    ledger=None,
) -> tuple[list[PlanResult] | None, list[PlanResult], int]:
    """Depth-first chaining of per-sheet best-first searches.

    Returns (full solution or None, longest solved prefix, total expansions).
    Each sheet's search yields goal nodes one at a time; a later sheet's
    failure resumes the earlier sheet's search at its next-best plan.
    """
    best_prefix: list[PlanResult] = []
    expansions = 0
    # one budget across the whole chain: infinite plan generators (paper-path
    # loops) are cut off jointly, not only per sheet
    budget = [node_limit]

    def solve(idx: int, stn, ledger, job_ends: dict, acc: list[PlanResult]):
        nonlocal best_prefix, expansions
        if idx == len(problems):
            return list(acc)
        p = problems[idx]
        t5 = None
        if p.chain_job_order:
            t5 = job_ends.get(p.record.job, _job_anchor(manager, p.record.job, p.record.seq))
        ctx = manager.build_context(
            p.request,
            stn=stn,
            ledger=ledger,
            fixed_start=p.fixed_start,
            min_end=p.min_end,
            node_limit=node_limit,
            shared_budget=budget,
            objective=Objective(w1=1.0, w2=0.0),
            rank_by="t6",  # minimize plan duration
            t5=t5,
        )
        if p.max_end is not None:
            ctx.max_end = p.max_end
        search = PlanSearch(p.request, ctx)
        gen = search.plans()
        while True:
            try:
                result = next(gen)
            except (NoPlan, Interrupted):
                expansions += search.expansions
                return None
            new_ends = dict(job_ends)
            if p.chain_job_order:
                new_ends[p.record.job] = result.t6
            acc.append(result)
            if len(acc) > len(best_prefix):
                best_prefix = list(acc)
            solved = solve(idx + 1, result.stn, result.ledger, new_ends, acc)
            if solved is not None:
                expansions += search.expansions
                return solved
            acc.pop()

    full = solve(0, manager.stn, ledger if ledger is not None else manager.ledger, {}, [])
    return full, best_prefix, expansions


def _job_anchor(manager: PlanManager, job: str, before_seq: int) -> TimePointId | None:
    """End point of the job's latest surviving committed sheet before `before_seq`."""
    best = None
    for seq in sorted(manager.records):
        if seq >= before_seq:
            break
        rec = manager.records[seq]
        if rec.job == job and rec.status in (Status.COMMITTED, Status.DONE) and not rec.purge:
            best = rec
    return best.t6 if best else None


# -- top-level exception dispatch ------------------------------------------------


def handle_exception(manager: PlanManager, msg: dict) -> ReplanOutcome | None:
    kind = msg["type"]
    if kind == "module_update":
        _apply_module_update(manager, msg)
        return None
    if kind == "break_in_future":
        for upd in msg.get("module_updates", []):
            _apply_module_update(manager, upd)
        return _replan_in_flight(manager, affected=set(msg.get("seqs", [])), jammed=set())
    if kind == "broken":
        for upd in msg.get("module_updates", []):
            _apply_module_update(manager, upd)
        return _replan_in_flight(
            manager, affected=set(), jammed=set(msg.get("jammed_seqs", []))
        )
    return None


def _apply_module_update(manager: PlanManager, msg: dict) -> None:
    cap = msg["capability"]
    if msg.get("state") == "off":
        manager.disabled_capabilities.add(cap)
    else:
        manager.disabled_capabilities.discard(cap)
    manager.events.append({"kind": "module_update", "capability": cap, "state": msg.get("state")})


def _cancel_unsent(manager: PlanManager) -> None:
    planned = sorted(r.seq for r in manager.records.values() if r.status is Status.PLANNED)
    if planned:
        manager.rollback_to(planned[0])


def _uses_disabled(manager: PlanManager, record: PlanRecord, from_time: float) -> bool:
    for step in record.steps:
        if manager.stn.earliest(step.end) <= from_time:
            continue
        if step.action.capability in manager.disabled_capabilities:
            return True
    return False


def _replan_in_flight(
    manager: PlanManager, affected: set[int], jammed: set[int]
) -> ReplanOutcome:
    outcome = ReplanOutcome()
    now = manager.clock()
    _cancel_unsent(manager)

    jammed_jobs: dict[str, int] = {}
    for seq in sorted(jammed):
        rec = manager.records.get(seq)
        if rec is None or rec.status in (Status.DONE, Status.LOST):
            continue
        rec.status = Status.LOST
        outcome.lost.append(seq)
        outcome.originals[seq] = rec.request
        jammed_jobs.setdefault(rec.job, seq)
        # the physical sheet stops here; its unexecuted reservations vanish
        _drop_future_allocations(manager, rec, now)

    budget = replan_budget(manager)
    solved: list[PlanResult] = []
    problems: list[ReplanProblem] = []
    doomed: list[int] = []
    ghosts: dict[int, list] = {}
    t_start = time.perf_counter()
    for attempt in range(2):
        outcome.budget = budget
        t_proj = now + budget
        problems, doomed = _build_problems(manager, affected, jammed_jobs, t_proj)
        # search against a ledger without the replanned sheets' own future
        # reservations: their plans are being replaced wholesale
        base_ledger, ghosts = _without_ghosts(manager, problems)
        # a sheet that is infeasible on its own can never be saved by
        # backtracking through earlier sheets' alternatives: drop it up front
        feasible = []
        for p in problems:
            if _solo_feasible(manager, p, base_ledger):
                feasible.append(p)
            else:
                doomed.append(p.record.seq)
        problems = feasible
        if not problems:
            solved = []
            break
        full, prefix, expansions = chained_bfs(manager, problems, ledger=base_ledger)
        outcome.expansions += expansions
        solved = full if full is not None else prefix
        outcome.spent = max(
            manager.config.predict_floor,
            outcome.expansions * manager.config.virtual_node_cost_us // 1000,
        )
        if manager.config.use_wall_time:
            outcome.spent = int((time.perf_counter() - t_start) * 1000)
        if outcome.spent <= budget:
            break
        # over budget: the plans are still usable if their pinned starts lie
        # beyond the actual completion instant; only a stale result forces
        # the documented escalation (double the budget, search again)
        margin = now + outcome.spent + manager.model.t_delay
        if solved and all(
            problems[i].fixed_start >= margin for i in range(len(solved))
        ):
            break
        budget *= 2

    for seq in doomed:
        rec = manager.records[seq]
        # heading into the failure before any diversion can apply; committed
        # reservations stay in the ledger until the machine reports the crash
        rec.status = Status.LOST
        outcome.lost.append(seq)
        outcome.unsalvageable.append(seq)
        outcome.originals[seq] = rec.request
    adopted_any = False
    for i, problem in enumerate(problems):
        rec = problem.record
        outcome.originals[rec.seq] = rec.request
        if i < len(solved):
            result = solved[i]
            rec.status = Status.CANCELLED  # superseded by the replacement
            new_rec = manager.adopt(problem.request, result)
            new_rec.purge = problem.purge
            manager.release(new_rec)
            adopted_any = True
            outcome.solved.append(rec.seq)
            if problem.purge:
                outcome.regenerated.append(rec.seq)
        else:
            rec.status = Status.LOST
            outcome.lost.append(rec.seq)
            outcome.unsalvageable.append(rec.seq)
            if adopted_any:
                # the adopted context lacks this sheet's reservations, but the
                # physical sheet keeps moving: put them back
                for alloc in ghosts.get(rec.seq, []):
                    _reinsert(manager, alloc)

    _regenerate_lost(manager, outcome)
    manager.renumber_queue()
    manager.events.append(
        {
            "kind": "replanned",
            "solved": outcome.solved,
            "unsalvageable": outcome.unsalvageable,
            "lost": outcome.lost,
            "budget": outcome.budget,
            "spent": outcome.spent,
        }
    )
    return outcome


def _build_problems(
    manager: PlanManager, affected: set[int], jammed_jobs: dict[str, int], t_proj: float
) -> tuple[list[ReplanProblem], list[int]]:
    """Replan problems for affected in-flight sheets, in original seq order.

    Pure: no record mutation, so the budget escalation can rebuild with a
    later projection. Sheets that cannot avoid the failure in time come back
    in the doomed list; their jobs' later in-flight sheets are treated like
    sheets behind a jam, since the lost content breaks the job's order either
    way.
    """
    problems: list[ReplanProblem] = []
    doomed: list[int] = []
    policy = manager.config.policy
    now = manager.clock()
    candidates = []
    lost_jobs = dict(jammed_jobs)
    for seq in sorted(manager.records):
        rec = manager.records[seq]
        if rec.status is not Status.COMMITTED:
            continue
        if manager.stn.earliest(rec.t6) <= t_proj:
            continue  # escapes before the diversion could apply
        needs_reroute = seq in affected or _uses_disabled(manager, rec, now)
        if needs_reroute:
            try:
                state, boundary = project(manager, rec, t_proj)
            except AlreadyLost:
                doomed.append(seq)
                if seq < lost_jobs.get(rec.job, seq + 1):
                    lost_jobs[rec.job] = seq
                continue
            candidates.append((rec, state, boundary, True))
        else:
            candidates.append((rec, None, None, False))
    for rec, state, boundary, needs_reroute in candidates:
        seq = rec.seq
        jam_ancestor = lost_jobs.get(rec.job)
        behind_jam = jam_ancestor is not None and seq > jam_ancestor
        if not behind_jam and not needs_reroute:
            continue
        if state is None:
            try:
                state, boundary = project(manager, rec, t_proj)
            except AlreadyLost:
                doomed.append(seq)
                continue
        goal, purge, min_end = rec.request.goal, False, None
        chain = True
        if behind_jam:
            goal, purge, min_end = regoal(manager, rec, policy)
            chain = not purge
        meta = dict(rec.request.meta)
        if purge:
            meta["no_chain"] = True  # a purged sheet leaves the job's order chain
        request = SheetRequest(
            seq=rec.seq,
            job=rec.job,
            initial=frozenset(state - manager.model.background),
            goal=goal,
            unknown=rec.request.unknown,
            meta=meta,
        )
        problems.append(
            ReplanProblem(
                record=rec,
                request=request,
                initial=state,
                fixed_start=boundary,
                purge=purge,
                min_end=min_end,
                chain_job_order=chain,
            )
        )
    return problems, doomed


def _without_ghosts(
    manager: PlanManager, problems: list[ReplanProblem]
) -> tuple["object", dict[int, list]]:
    """Working ledger for the joint replan, minus the replanned sheets' own
    not-yet-executed reservations (keyed by seq for possible restoration)."""
    ledger = manager.ledger.fork()
    stn = manager.stn
    ghosts: dict[int, list] = {}
    for p in problems:
        seq, boundary = p.record.seq, p.fixed_start

        def is_ghost(a, seq=seq, boundary=boundary):
            if a.owner[0] != seq:
                return False
            start = a.fixed[0] if a.fixed is not None else stn.earliest(a.start)
            return start >= boundary

        ghosts[seq] = [
            a for res in ledger.resources() for a in ledger.entries(res) if is_ghost(a)
        ]
        ledger.remove_if(is_ghost)
    return ledger, ghosts


def _solo_feasible(manager: PlanManager, p: ReplanProblem, ledger) -> bool:
    """Can this sheet's replan problem be rooted at all (goals reachable)?"""
    ctx = manager.build_context(
        p.request,
        stn=manager.stn,
        ledger=ledger,
        fixed_start=p.fixed_start,
        min_end=p.min_end,
        rank_by="t6",
        t5=None,
    )
    search = PlanSearch(p.request, ctx)
    return bool(search._open)


def _reinsert(manager: PlanManager, alloc) -> None:
    """Put a committed (clamped) allocation back in temporal position."""
    stn = manager.stn
    entries = manager.ledger.entries(alloc.res)
    start = alloc.windows(stn)[0]
    index = sum(1 for a in entries if a.windows(stn)[0] <= start)
    manager.ledger.insert(alloc.res, index, alloc)


def _drop_future_allocations(manager: PlanManager, record: PlanRecord, now: float) -> None:
    stn = manager.stn

    def future(a):
        if a.owner[0] != record.seq:
            return False
        start = a.fixed[0] if a.fixed is not None else stn.earliest(a.start)
        return start >= now

    manager.ledger.remove_if(future)


def _regenerate_lost(manager: PlanManager, outcome: ReplanOutcome) -> None:
    """Fresh requests re-creating lost/purged content, at the queue head."""
    regen: list[SheetRequest] = []
    for seq in sorted(set(outcome.lost) | set(outcome.regenerated)):
        original = outcome.originals.get(seq)
        rec = manager.records.get(seq)
        if original is None or rec is None:
            continue
        new_seq = manager.next_regen_seq()
        meta = {k: v for k, v in original.meta.items() if k not in ("no_chain", "max_end")}
        meta["recreates"] = meta.get("recreates", seq)  # content lineage
        if manager.config.policy == "hold" and seq in outcome.lost:
            # the recreated sheet must finish before the holding successor
            holder = _holding_successor(manager, rec)
            if holder is not None:
                meta["max_end"] = int(manager.stn.earliest(holder.t6)) - 1
                meta["no_chain"] = True
        regen.append(
            SheetRequest(
                seq=new_seq,
                job=original.job,
                initial=original.initial,
                goal=original.goal,
                unknown=original.unknown,
                meta=meta,
            )
        )
    if not regen:
        return
    for job in {r.job for r in regen}:
        info = manager.jobs.get(job)
        if info and manager.config.policy != "hold":
            info.last_end = None  # chain restarts with the recreated content
    manager.requeue_front(regen)
    for req in regen:
        job = manager.jobs.get(req.job)
        if job:
            job.submitted += 1
    manager.events.append({"kind": "regenerated", "seqs": [r.seq for r in regen]})


def _holding_successor(manager: PlanManager, lost: PlanRecord) -> PlanRecord | None:
    for seq in sorted(manager.records):
        rec = manager.records[seq]
        if rec.job == lost.job and seq > lost.seq and rec.status is Status.COMMITTED and not rec.purge:
            return rec
    return None

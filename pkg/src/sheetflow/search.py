"""Per-sheet A* regression search over (literals, temporal network, ledger) nodes.

Search runs backward from the goal. Expanding a node regresses one action and
immediately resolves any resource contention, so one action choice can spawn
several children (one per feasible slot assignment). Every child forks the
temporal network and the ledger, posts the action's duration, the meet-in-time
constraint with the suffix, its allocation windows, the chosen slot orderings,
and the heuristic insertion - an inconsistent child is simply dropped. Node
evaluation is the earliest feasible time of the global end point t7, so the
returned plan minimizes the combined end time of everything committed so far.

States reached by different paths are distinct by construction (each branch is
a different irrevocable commitment), so there is no duplicate detection.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

from .graph import CostTable, HeuristicConfig, LookupTableSet, PlanningGraph
from .ledger import Allocation, Ledger, enumerate_slots, slot_constraints
from .model import Cyclic, UnitCapacity
from .logic import LogicState, applicable, progress, regress, satisfies, unifies_with_initial
from .model import GroundAction, MachineModel
from .requests import SheetRequest
from .stn import DiffConstraint, Stn, TimePointId, exact, window
from .ticks import INF


class NoPlan(Exception):
    pass


class Interrupted(Exception):
    pass


@dataclass
class Objective:
    w1: float = 1.0
    w2: float = 0.0
    tiered: bool = False

    def __post_init__(self) -> None:
        if self.w1 < 0 or self.w2 < 0 or (self.w1 == 0 and self.w2 == 0):
            raise ValueError("objective weights must be >= 0 and not both 0")


@dataclass
class EpisodeClock:
    t1: int  # wall-clock tick at which planning started
    t2: int  # earliest-start-time: now + predicted planning time + t_delay
    t7: TimePointId  # global floating end point


class PlanningTimePredictor:
    """Exponential moving average of episode durations, doubled for safety."""

    def __init__(self, alpha: float = 0.2, safety: float = 2.0, floor: int = 50) -> None:
        self.alpha, self.safety, self.floor = alpha, safety, floor
        self._ema: float | None = None

    def observe(self, duration: float) -> None:
        if self._ema is None:
            self._ema = float(duration)
        else:
            self._ema = self.alpha * duration + (1 - self.alpha) * self._ema

    def predict(self) -> int:
        if self._ema is None:
            return self.floor
        return max(self.floor, int(self._ema * self.safety + 0.5))


@dataclass
class PlannedStep:
    action: GroundAction
    start: TimePointId
    end: TimePointId
    allocs: tuple[tuple[Allocation, ...], ...] = ()


@dataclass
class PlanResult:
    request: SheetRequest
    steps: list[PlannedStep]  # execution order
    finisher: str | None
    t6: TimePointId
    stn: Stn  # context including this plan's commitments
    ledger: Ledger
    goal: LogicState
    g_cost: float
    expansions: int
    end_time: float  # earliest(t6)
    global_end: float  # earliest(t7)


@dataclass
class PlanContext:
    """Everything one planning episode reads; owned by the plan manager."""

    model: MachineModel
    actions: list[GroundAction]
    stn: Stn
    ledger: Ledger
    clock: EpisodeClock
    objective: Objective = field(default_factory=Objective)
    t5: TimePointId | None = None  # previous sheet of the job, if any
    eligible_finishers: list[str] | None = None
    removed: frozenset[int] = frozenset()  # disallowed action ids (delta-E, faults)
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    multi_table: bool = False
    table_m: int = 2
    # when False, heuristics come from the unconstrained action set even when
    # actions are removed for this sheet (the naive single-table baseline)
    constrained_heuristic: bool = True
    node_limit: int = 200_000
    shared_budget: list | None = None  # joint replanning: one counter across searches
    fixed_start: int | None = None  # replanning: plan must start exactly here
    min_end: int | None = None  # replanning hold policy: end no earlier than this
    max_end: int | None = None  # recreated sheet must finish before its holder
    rank_by: str = "t7"  # "t6" for replanning: minimize plan duration
    append_only: bool = False  # greedy baseline: only the after-newest slot

    # built lazily per episode
    graph_adj: PlanningGraph | None = None
    graph_plain: PlanningGraph | None = None
    cost_table: CostTable | None = None
    tables: LookupTableSet | None = None
    initial: frozenset[int] = frozenset()
    _est_cache: dict = field(default_factory=dict)

    def prepare(self, request: SheetRequest) -> None:
        self.initial = request.initial | self.model.background
        nf = len(self.model.vocab)
        if self.constrained_heuristic:
            acts = [a for a in self.actions if a.id not in self.removed]
        else:
            acts = list(self.actions)
        origin = self.clock.t2
        if self.heuristic.resource_adjust:
            snap = {
                res: [(ls - origin, ee - origin) for ls, ee in rows if ee > origin]
                for res, rows in self.ledger.snapshot_windows(self.stn).items()
            }
            self.graph_adj = PlanningGraph(acts, self.initial, nf, self.heuristic, snap, origin)
            if self.multi_table:
                self.tables = LookupTableSet(
                    [a for a in self.actions],
                    self.initial,
                    nf,
                    self.heuristic,
                    snap,
                    origin,
                    m=self.table_m,
                )
        else:
            # without resource adjustment the same graph serves both bounds
            plain_cfg = HeuristicConfig(self.heuristic.logical_mutex, False)
            self.graph_plain = PlanningGraph(acts, self.initial, nf, plain_cfg)
        if self.objective.w2 > 0 or self.objective.tiered:
            self.cost_table = CostTable(acts, self.initial, nf)

    def estimates(self, goals: frozenset[int]) -> tuple[float, float]:
        """(duration bound for t3+D<=t4, absolute bound for t4>=t2+D).

        Memoized per literal set: slot branching revisits the same regressed
        states constantly.
        """
        hit = self._est_cache.get(goals)
        if hit is not None:
            return hit
        if not self.heuristic.resource_adjust:
            out = (self.graph_plain.estimate(goals), 0.0)
        elif self.multi_table and self.tables is not None and self.removed:
            out = (0.0, self.tables.constrained_estimate(goals, self.removed))
        else:
            out = (0.0, self.graph_adj.estimate(goals))
        self._est_cache[goals] = out
        return out

    def cost_to_go(self, goals: frozenset[int]) -> float:
        if self.cost_table is None:
            return 0.0
        return self.cost_table.cost_to_go(goals)


@dataclass
class SearchNode:
    logic: LogicState
    stn: Stn
    ledger: Ledger
    parent: "SearchNode | None"
    action: GroundAction | None
    start_pt: TimePointId  # t4: start of the earliest suffix action (t6 at the root)
    end_pt: TimePointId
    t3: TimePointId
    t6: TimePointId
    finisher: str | None
    g_cost: float
    node_id: int
    suffix_dur: int = 0  # sum of dur_lb over the suffix, for cheap child bounds
    key: tuple = ()

    def suffix(self) -> list[PlannedStep]:
        steps = []
        node = self
        while node.action is not None:
            steps.append(PlannedStep(node.action, node.start_pt, node.end_pt))
            node = node.parent
        return steps


@dataclass
class PendingChild:
    """A generated but not yet materialized child.

    Carries everything needed to build the real node later: the temporal
    network fork and propagation happen only if this entry is actually popped.
    Its queue key is the parent's (a valid lower bound, since a child only adds
    constraints); on pop the true key is computed and the node re-queued if it
    worsened.
    """

    parent: SearchNode
    action: GroundAction
    logic: LogicState
    slots: tuple[tuple[str, int], ...]  # (resource, insert index) per allocation
    d_plain: float
    d_adj: float
    node_id: int


def make_goal_state(model: MachineModel, true: frozenset[int], unknown: frozenset[int]) -> LogicState:
    """Close the goal: families the request never mentions are don't-care."""
    from .literals import predicate_of

    mentioned = {predicate_of(model.vocab.name(l)) for l in true | unknown}
    extra = {
        l
        for l in range(len(model.vocab))
        if l not in true and predicate_of(model.vocab.name(l)) not in mentioned
    }
    return LogicState(true, frozenset((unknown | extra) - true))


class PlanSearch:
    """One episode's best-first search; yields goal nodes one at a time."""

    def __init__(self, request: SheetRequest, ctx: PlanContext) -> None:
        self.request = request
        self.ctx = ctx
        ctx.prepare(request)
        self.expansions = 0
        self._counter = itertools.count()
        self._open: list[tuple] = []
        self._actions = [a for a in ctx.actions if a.id not in ctx.removed]
        self._seed_roots()

    # -- roots ---------------------------------------------------------------

    def _goal_variants(self) -> list[tuple[frozenset[int], str | None]]:
        model = self.ctx.model
        vocab = model.vocab
        goal_locs = [
            l for l in self.request.goal if vocab.name(l).startswith("Loc(")
        ]
        if goal_locs:
            fin = vocab.name(goal_locs[0])[4:-1].split(",")[1]
            return [(self.request.goal, fin)]
        finishers = self.ctx.eligible_finishers
        if finishers is None:
            finishers = model.finishers()
        return [
            (self.request.goal | {model.location(f)}, f) for f in finishers
        ]

    def _seed_roots(self) -> None:
        ctx = self.ctx
        for goal_true, finisher in self._goal_variants():
            logic = make_goal_state(ctx.model, goal_true, self.request.unknown)
            stn = ctx.stn.fork()
            t6 = stn.add_point()
            t3 = stn.add_point()
            ok = stn.add_constraint(window(t3, ctx.clock.t2, INF))
            ok = ok and stn.add_constraint(DiffConstraint(t6, ctx.clock.t7, 0, INF))
            if ctx.t5 is not None:
                ok = ok and stn.add_constraint(DiffConstraint(ctx.t5, t6, 0, INF))
            if ctx.min_end is not None:
                ok = ok and stn.add_constraint(window(t6, ctx.min_end, INF))
            if ctx.max_end is not None:
                ok = ok and stn.add_constraint(window(t6, 0, ctx.max_end))
            if ctx.fixed_start is not None:
                ok = ok and stn.add_constraint(window(t6, ctx.fixed_start, INF))
            d_plain, d_adj = ctx.estimates(logic.true)
            if d_plain == INF or d_adj == INF:
                continue
            if d_plain > 0:
                ok = ok and stn.add_constraint(DiffConstraint(t3, t6, d_plain, INF))
            if d_adj > 0:
                ok = ok and stn.add_constraint(window(t6, ctx.clock.t2 + d_adj, INF))
            if not ok:
                continue
            node = SearchNode(
                logic=logic,
                stn=stn,
                ledger=ctx.ledger.fork(),
                parent=None,
                action=None,
                start_pt=t6,
                end_pt=t6,
                t3=t3,
                t6=t6,
                finisher=finisher,
                g_cost=0.0,
                node_id=next(self._counter),
            )
            self._push(node)

    # -- evaluation ----------------------------------------------------------

    def _eval(self, node: SearchNode) -> None:
        ctx = self.ctx
        t7_lo = node.stn.earliest(ctx.clock.t7)
        t6_lo = node.stn.earliest(node.t6)
        total_cost = node.g_cost + ctx.cost_to_go(node.logic.true)
        primary = t6_lo if ctx.rank_by == "t6" else t7_lo
        if ctx.objective.tiered:
            obj1, obj2 = primary, total_cost
        else:
            obj1, obj2 = ctx.objective.w1 * primary + ctx.objective.w2 * total_cost, 0.0
        predicted_makespan = t6_lo - node.stn.earliest(node.t3)
        realized = t6_lo - node.stn.earliest(node.start_pt)
        node.key = (obj1, obj2, t6_lo, predicted_makespan, -realized, node.node_id)

    def _push(self, node: SearchNode) -> None:
        self._eval(node)
        heapq.heappush(self._open, (node.key, node))

    # -- search --------------------------------------------------------------

    def plans(self):
        """Generator of successive goal nodes in best-first order."""
        ctx = self.ctx
        initial = ctx.initial
        while self._open:
            if self.expansions >= ctx.node_limit:
                raise Interrupted(f"node limit {ctx.node_limit} reached")
            if ctx.shared_budget is not None and ctx.shared_budget[0] <= 0:
                raise Interrupted("joint replanning budget exhausted")
            key, entry = heapq.heappop(self._open)
            if isinstance(entry, PendingChild):
                node = self._materialize(entry)
                if node is None:
                    continue
                if node.key > key:
                    heapq.heappush(self._open, (node.key, node))
                    continue
            else:
                node = entry
            if unifies_with_initial(node.logic, initial):
                result = self._finish(node)
                if result is not None:
                    yield result
                continue
            self.expansions += 1
            if ctx.shared_budget is not None:
                ctx.shared_budget[0] -= 1
            for a in self._actions:
                if applicable(a, node.logic):
                    self._expand_action(node, a)
        raise NoPlan(f"search exhausted for sheet {self.request.seq}")

    def _expand_action(self, node: SearchNode, a: GroundAction) -> None:
        """Generate children lazily: enumerate feasible slot combinations and
        queue them under the parent's key; the expensive network fork happens
        only when one is popped."""
        ctx = self.ctx
        child_logic = regress(a, node.logic)
        d_plain, d_adj = ctx.estimates(child_logic.true)
        if d_plain == INF or d_adj == INF:
            return
        head_lo, head_hi = node.stn.window_of(node.start_pt)
        t3_lo = node.stn.earliest(node.t3)
        s_lo = max(head_lo - a.dur_ub, t3_lo + d_plain)
        if d_adj > 0:
            s_lo = max(s_lo, ctx.clock.t2 + d_adj)
        if ctx.fixed_start is not None:
            # no action can precede the pinned plan start
            s_lo = max(s_lo, ctx.fixed_start)
        s_hi = head_hi - a.dur_lb
        if s_lo > s_hi:
            return
        slot_lists: list[list[tuple[str, int, float, float]]] = []
        for spec in a.allocs:
            es, ls = s_lo + spec.offset, s_hi + spec.offset
            if spec.span:
                ee, le = head_lo, head_hi
            else:
                ee, le = es + spec.dur, ls + spec.dur
            entries = node.ledger.entries(spec.res)
            kind = ctx.model.resources[spec.res]
            slots = enumerate_slots(kind, entries, (es, ls, ee, le), spec.state_label, node.stn)
            if ctx.append_only:
                # greedy baseline: go after every *other* sheet's allocations;
                # interleaving with this sheet's own passes stays legal
                slots = [
                    (i, f)
                    for i, f in slots
                    if all(e.owner[0] == self.request.seq for e in entries[i:])
                ]
            if not slots:
                return
            # displacement pricing (exclusive resources): everything at or
            # after the chosen slot serializes behind our allocation, so the
            # global end is at least our end plus their minimal durations
            push = [0.0] * (len(entries) + 1)
            if isinstance(kind, (UnitCapacity, Cyclic)):
                for j in range(len(entries) - 1, -1, -1):
                    e = entries[j]
                    ees, _, eee, _ = e.windows(node.stn)
                    mind = max(0.0, eee - ees) if e.fixed is None else 0.0
                    push[j] = push[j + 1] + mind
            priced = []
            for i, f in slots:
                start_fl = max(f - spec.offset, s_lo)
                end_fl = start_fl + spec.offset + spec.dur
                priced.append((spec.res, i, start_fl, end_fl + push[i]))
            slot_lists.append(priced)
        suffix_dur = node.suffix_dur + a.dur_lb
        total_cost = node.g_cost + a.cost + ctx.cost_to_go(child_logic.true)
        parent_primary_lo = node.stn.earliest(
            node.t6 if ctx.rank_by == "t6" else ctx.clock.t7
        )
        combos = itertools.product(*slot_lists) if slot_lists else [()]
        for combo in combos:
            # price the child before materializing it: its own chain can end
            # no earlier than the slots allow, and neither can what it pushes
            start_floor = max([s_lo] + [f for _, _, f, _ in combo])
            t6_floor = start_floor + suffix_dur
            primary = max(parent_primary_lo, t6_floor)
            if ctx.rank_by != "t6":
                for _, _, _, pushed in combo:
                    if pushed > primary:
                        primary = pushed
            if ctx.objective.tiered:
                obj1, obj2 = primary, total_cost
            else:
                obj1 = ctx.objective.w1 * primary + ctx.objective.w2 * total_cost
                obj2 = 0.0
            child = PendingChild(
                parent=node,
                action=a,
                logic=child_logic,
                slots=tuple((res, i) for res, i, _, _ in combo),
                d_plain=d_plain,
                d_adj=d_adj,
                node_id=next(self._counter),
            )
            t6b = max(node.stn.earliest(node.t6), t6_floor)
            key = (obj1, obj2, t6b, t6b - t3_lo, -(t6b - start_floor), child.node_id)
            heapq.heappush(self._open, (key, child))

    def _materialize(self, pc: PendingChild) -> SearchNode | None:
        ctx = self.ctx
        node, a = pc.parent, pc.action
        stn = node.stn.fork()
        s_a = stn.add_point()
        e_a = stn.add_point()
        cons = [
            DiffConstraint(s_a, e_a, a.dur_lb, a.dur_ub),
            exact(e_a, node.start_pt, 0),  # adjacent actions meet in time
        ]
        new_allocs: list[Allocation] = []
        for spec in a.allocs:
            s_al = stn.add_point()
            e_al = stn.add_point()
            cons.append(exact(s_a, s_al, spec.offset))
            if spec.span:
                cons.append(exact(e_al, e_a, 0))
            else:
                cons.append(exact(s_al, e_al, spec.dur))
            new_allocs.append(
                Allocation(
                    res=spec.res,
                    start=s_al,
                    end=e_al,
                    owner=(self.request.seq, node.node_id),
                    state_label=spec.state_label,
                )
            )
        for alloc, (res, index) in zip(new_allocs, pc.slots):
            entries = node.ledger.entries(res)
            cons.extend(slot_constraints(ctx.model.resources[res], entries, index, alloc))
        if pc.d_plain > 0:
            cons.append(DiffConstraint(node.t3, s_a, pc.d_plain, INF))
        if pc.d_adj > 0:
            cons.append(window(s_a, ctx.clock.t2 + pc.d_adj, INF))
        if ctx.fixed_start is not None:
            cons.append(window(s_a, ctx.fixed_start, INF))
        if not stn.add_constraints(cons):
            return None
        ledger = node.ledger.fork()
        # placements against one snapshot: apply in descending index per resource
        placements = sorted(zip(new_allocs, pc.slots), key=lambda p: -p[1][1])
        for alloc, (res, index) in placements:
            ledger.insert(res, index, alloc)
        child = SearchNode(
            logic=pc.logic,
            stn=stn,
            ledger=ledger,
            parent=node,
            action=a,
            start_pt=s_a,
            end_pt=e_a,
            t3=node.t3,
            t6=node.t6,
            finisher=node.finisher,
            g_cost=node.g_cost + a.cost,
            node_id=pc.node_id,
        )
        self._eval(child)
        return child

    def _finish(self, node: SearchNode) -> PlanResult | None:
        ctx = self.ctx
        steps = node.suffix()
        stn = node.stn
        if ctx.fixed_start is not None:
            if not steps:
                return None
            stn = stn.fork()
            if not stn.add_constraint(window(steps[0].start, ctx.fixed_start, ctx.fixed_start)):
                return None
        return PlanResult(
            request=self.request,
            steps=steps,
            finisher=node.finisher,
            t6=node.t6,
            stn=stn,
            ledger=node.ledger,
            goal=_root_of(node).logic,
            g_cost=node.g_cost,
            expansions=self.expansions,
            end_time=stn.earliest(node.t6),
            global_end=stn.earliest(ctx.clock.t7),
        )


def _root_of(node: SearchNode) -> SearchNode:
    while node.parent is not None:
        node = node.parent
    return node


def plan_sheet(request: SheetRequest, ctx: PlanContext) -> PlanResult:
    """Optimal plan for one sheet in the context of all prior commitments."""
    search = PlanSearch(request, ctx)
    return next(search.plans())


def sort_key(search: PlanSearch, node: SearchNode) -> tuple:
    return node.key


def validate_result(result: PlanResult, ctx_initial: frozenset[int]) -> list[str]:
    """Independent checks on a returned plan: regression soundness via forward
    execution, temporal consistency, nonnegative schedule."""
    problems = []
    plan = [s.action for s in result.steps]
    final = progress(ctx_initial, plan)
    if final is None:
        problems.append("plan not executable forward from the initial state")
    elif not satisfies(final, result.goal):
        problems.append("executed plan does not satisfy the goal's determinate literals")
    if not result.stn.consistent:
        problems.append("final temporal network inconsistent")
    last = None
    for step in result.steps:
        lo = result.stn.earliest(step.start)
        if last is not None and lo < last:
            problems.append("suffix actions out of time order")
        last = result.stn.earliest(step.end)
    return problems

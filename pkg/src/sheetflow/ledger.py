"""Resource-allocation ledger and conflict-ordering branching.

Each resource keeps its allocations as an immutable tuple in committed
temporal order; forked ledgers share the tuples, so copying a ledger is
O(resources). Placing a new allocation enumerates every temporally feasible
slot among the existing ones and emits the STN constraints that commit the
choice - one candidate per slot, cross-multiplied over the action's resources.
Candidates whose windows already rule the slot out are dropped before any
propagation happens.

Cyclic resources are handled by materializing their busy windows as immovable
fixed entries up to a rolling horizon, terminated by an infinite blocker so
nothing can be scheduled past the materialized range.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .model import Cyclic, MachineModel, MultiCapacity, ResourceKind, StateResource, UnitCapacity, cyclic_windows
from .stn import T0, DiffConstraint, Stn, TimePointId
from .ticks import INF, NEG_INF

CYCLIC_OWNER = ("cyclic", -1)


@dataclass(frozen=True)
class Allocation:
    res: str
    start: TimePointId
    end: TimePointId
    owner: tuple = (None, None)  # (sheet seq, action index)
    state_label: str | None = None
    fixed: tuple[float, float] | None = None  # constants for immovable entries

    def windows(self, stn: Stn) -> tuple[float, float, float, float]:
        """(earliest_start, latest_start, earliest_end, latest_end)."""
        if self.fixed is not None:
            s, e = self.fixed
            return s, s, e, e
        return (
            stn.earliest(self.start),
            stn.latest(self.start),
            stn.earliest(self.end),
            stn.latest(self.end),
        )


def fixed_allocation(
    res: str, start: float, end: float, owner: tuple = CYCLIC_OWNER, state_label: str | None = None
) -> Allocation:
    return Allocation(res=res, start=-1, end=-1, owner=owner, state_label=state_label, fixed=(start, end))


@dataclass(frozen=True)
class Candidate:
    """One conflict-free placement choice for an action's allocations."""

    constraints: tuple[DiffConstraint, ...]
    placements: tuple[tuple[str, int, Allocation], ...]  # (res, index, alloc)


class Ledger:
    __slots__ = ("_seqs", "cyclic_horizon")

    def __init__(self) -> None:
        self._seqs: dict[str, tuple[Allocation, ...]] = {}
        self.cyclic_horizon: dict[str, float] = {}

    def fork(self) -> "Ledger":
        child = Ledger.__new__(Ledger)
        child._seqs = self._seqs.copy()
        child.cyclic_horizon = self.cyclic_horizon.copy()
        return child

    def entries(self, res: str) -> tuple[Allocation, ...]:
        return self._seqs.get(res, ())

    def resources(self) -> list[str]:
        return list(self._seqs.keys())

    def insert(self, res: str, index: int, alloc: Allocation) -> None:
        seq = self._seqs.get(res, ())
        self._seqs[res] = seq[:index] + (alloc,) + seq[index:]

    def apply(self, cand: Candidate) -> None:
        # placements computed against one snapshot: apply in descending index
        for res, index, alloc in sorted(cand.placements, key=lambda p: -p[1]):
            self.insert(res, index, alloc)

    def remove_if(self, pred) -> int:
        removed = 0
        for res, seq in list(self._seqs.items()):
            kept = tuple(a for a in seq if not pred(a))
            removed += len(seq) - len(kept)
            self._seqs[res] = kept
        return removed

    def freeze_owner(self, owner_seq: int, stn: Stn) -> None:
        """Replace a committed sheet's allocations with fixed-value entries.

        After clamping, the points are singletons forever; fixed entries spare
        every later slot enumeration the network lookups.
        """
        for res, seq in self._seqs.items():
            if not any(a.owner[0] == owner_seq and a.fixed is None for a in seq):
                continue
            self._seqs[res] = tuple(
                fixed_allocation(
                    a.res,
                    stn.earliest(a.start),
                    stn.earliest(a.end),
                    owner=a.owner,
                    state_label=a.state_label,
                )
                if a.owner[0] == owner_seq and a.fixed is None
                else a
                for a in seq
            )

    def seed_cyclic(self, res: str, kind: Cyclic, horizon: float, stn: Stn) -> None:
        """Materialize busy windows up to `horizon` plus an end-of-range blocker.

        Re-seeding with a larger horizon replaces the fixed entries and merges
        the flexible allocations back in temporal order; each flexible entry
        was slotted strictly between two busy windows, so ordering by earliest
        start is exact.
        """
        entries = [fixed_allocation(res, s, e) for s, e in cyclic_windows(kind, int(horizon))]
        entries.append(fixed_allocation(res, horizon, INF))
        flexible = [a for a in self._seqs.get(res, ()) if a.owner != CYCLIC_OWNER]
        merged = entries + flexible
        merged.sort(key=lambda a: (a.windows(stn)[0], 0 if a.fixed is None else 1))
        self._seqs[res] = tuple(merged)
        self.cyclic_horizon[res] = horizon

    def live_points(self) -> set[TimePointId]:
        pts = set()
        for seq in self._seqs.values():
            for a in seq:
                if a.fixed is None:
                    pts.add(a.start)
                    pts.add(a.end)
        return pts

    def snapshot_windows(self, stn: Stn) -> dict[str, list[tuple[float, float]]]:
        """Per resource: (latest_start, earliest_end) pairs, temporal order.

        This is the frozen view CheckEarliest walks during one planning
        episode.
        """
        out = {}
        for res, seq in self._seqs.items():
            rows = []
            for a in seq:
                es, ls, ee, le = a.windows(stn)
                rows.append((ls, ee))
            out[res] = rows
        return out


# -- slot enumeration --------------------------------------------------------


def _prec(a: Allocation, b: Allocation) -> list[DiffConstraint]:
    """a entirely before b (touching allowed)."""
    if a.fixed is not None and b.fixed is not None:
        return []  # both immovable; feasibility handled by the quick check
    if a.fixed is not None:
        return [DiffConstraint(T0, b.start, a.fixed[1], INF)]
    if b.fixed is not None:
        return [DiffConstraint(T0, a.end, NEG_INF, b.fixed[0])]
    return [DiffConstraint(a.end, b.start, 0, INF)]


def _start_order(a: Allocation, b: Allocation) -> list[DiffConstraint]:
    if a.fixed is not None and b.fixed is not None:
        return []
    if a.fixed is not None:
        return [DiffConstraint(T0, b.start, a.fixed[0], INF)]
    if b.fixed is not None:
        return [DiffConstraint(T0, a.start, NEG_INF, b.fixed[0])]
    return [DiffConstraint(a.start, b.start, 0, INF)]


def _end_order(a: Allocation, b: Allocation) -> list[DiffConstraint]:
    if a.fixed is not None and b.fixed is not None:
        return []
    if a.fixed is not None:
        return [DiffConstraint(T0, b.end, a.fixed[1], INF)]
    if b.fixed is not None:
        return [DiffConstraint(T0, a.end, NEG_INF, b.fixed[1])]
    return [DiffConstraint(a.end, b.end, 0, INF)]


def _fits_before(stn: Stn, first: Allocation, second: Allocation) -> bool:
    """Quick lb/ub check: can `first` end by the time `second` must start?"""
    _, _, ee, _ = first.windows(stn)
    _, ls, _, _ = second.windows(stn)
    return ee <= ls


Windows = tuple[float, float, float, float]  # (es, ls, ee, le)


def _ends_by(stn: Stn, first: Allocation, latest_start: float) -> bool:
    ee = first.fixed[1] if first.fixed is not None else stn.earliest(first.end)
    if ee == INF:
        return False  # nothing fits after an unbounded blocker
    return ee <= latest_start


def _starts_after(stn: Stn, second: Allocation, earliest_end: float) -> bool:
    ls = second.fixed[0] if second.fixed is not None else stn.latest(second.start)
    return earliest_end <= ls


def _earliest_end(stn: Stn, a: Allocation) -> float:
    return a.fixed[1] if a.fixed is not None else stn.earliest(a.end)


def enumerate_slots(
    kind: ResourceKind,
    seq: tuple[Allocation, ...],
    new_windows: Windows,
    new_label: str | None,
    stn: Stn,
) -> list[tuple[int, float]]:
    """Feasible (insert index, start floor) pairs for a prospective allocation.

    The quick check uses only current windows; slots it keeps may still fail
    propagation later, but slots it drops are provably infeasible. The floor
    is the earliest the allocation could start in that slot (the relevant
    predecessor's earliest end), a sound lower bound used to price deferred
    search children.
    """
    es, ls, ee, le = new_windows
    n = len(seq)
    out: list[tuple[int, float]] = []

    if isinstance(kind, (UnitCapacity, Cyclic)):
        for i in range(n + 1):
            if i > 0 and not _ends_by(stn, seq[i - 1], ls):
                continue
            if i < n and not _starts_after(stn, seq[i], ee):
                continue
            out.append((i, _earliest_end(stn, seq[i - 1]) if i > 0 else 0.0))
        return out

    if isinstance(kind, MultiCapacity):
        k = kind.k
        for i in range(n + 1):
            if i >= k and not _ends_by(stn, seq[i - k], ls):
                continue
            if i + k - 1 < n and not _starts_after(stn, seq[i + k - 1], ee):
                continue
            out.append((i, _earliest_end(stn, seq[i - k]) if i >= k else 0.0))
        return out

    if isinstance(kind, StateResource):
        runs = _runs(seq)

        def run_ok(before_run, after_run) -> bool:
            if before_run:
                for other in seq[before_run[1] : before_run[2] + 1]:
                    if not _ends_by(stn, other, ls):
                        return False
            if after_run:
                for other in seq[after_run[1] : after_run[2] + 1]:
                    if not _starts_after(stn, other, ee):
                        return False
            return True

        def floor_of(before_run) -> float:
            if not before_run:
                return 0.0
            return max(
                _earliest_end(stn, seq[j]) for j in range(before_run[1], before_run[2] + 1)
            )

        for r, (label, lo_idx, hi_idx) in enumerate(runs):
            if label != new_label:
                continue
            before_run = runs[r - 1] if r > 0 else None
            after_run = runs[r + 1] if r + 1 < len(runs) else None
            if run_ok(before_run, after_run):
                out.append((hi_idx + 1, floor_of(before_run)))
        for g in range(len(runs) + 1):
            before_run = runs[g - 1] if g > 0 else None
            after_run = runs[g] if g < len(runs) else None
            if before_run and before_run[0] == new_label:
                continue  # covered by the join candidate
            if after_run and after_run[0] == new_label:
                continue
            if run_ok(before_run, after_run):
                out.append((before_run[2] + 1 if before_run else 0, floor_of(before_run)))
        return sorted(out)

    raise TypeError(f"unknown resource kind {kind!r}")


def slot_constraints(
    kind: ResourceKind, seq: tuple[Allocation, ...], index: int, new: Allocation
) -> list[DiffConstraint]:
    """Constraints committing `new` to the given insert position."""
    n = len(seq)
    cons: list[DiffConstraint] = []
    if isinstance(kind, (UnitCapacity, Cyclic)):
        if index > 0:
            cons += _prec(seq[index - 1], new)
        if index < n:
            cons += _prec(new, seq[index])
        return cons
    if isinstance(kind, MultiCapacity):
        k = kind.k
        if index > 0:
            cons += _start_order(seq[index - 1], new)
            cons += _end_order(seq[index - 1], new)
        if index < n:
            cons += _start_order(new, seq[index])
            cons += _end_order(new, seq[index])
        # capacity: with the insertion, every pair k apart must not overlap;
        # this includes formerly k-1-apart pairs that now straddle the new one
        new_seq = seq[:index] + (new,) + seq[index:]
        for x in range(k, len(new_seq)):
            cons += _prec(new_seq[x - k], new_seq[x])
        return cons
    if isinstance(kind, StateResource):
        runs = _runs(seq)
        joining = (
            index > 0
            and seq[index - 1].state_label == new.state_label
        )
        if joining:
            r = next(i for i, run in enumerate(runs) if run[1] <= index - 1 <= run[2])
            before_run = runs[r - 1] if r > 0 else None
            after_run = runs[r + 1] if r + 1 < len(runs) else None
        else:
            before_run = next((run for run in reversed(runs) if run[2] < index), None)
            after_run = next((run for run in runs if run[1] >= index), None)
        if before_run:
            for other in seq[before_run[1] : before_run[2] + 1]:
                cons += _prec(other, new)
        if after_run:
            for other in seq[after_run[1] : after_run[2] + 1]:
                cons += _prec(new, other)
        return cons
    raise TypeError(f"unknown resource kind {kind!r}")


def slot_candidates(
    kind: ResourceKind, seq: tuple[Allocation, ...], new: Allocation, stn: Stn
) -> list[tuple[int, list[DiffConstraint]]]:
    """All feasible (insert index, constraints) placements on one resource."""
    windows = new.windows(stn)
    return [
        (i, slot_constraints(kind, seq, i, new))
        for i, _ in enumerate_slots(kind, seq, windows, new.state_label, stn)
    ]


def _runs(seq: tuple[Allocation, ...]) -> list[tuple[str | None, int, int]]:
    """Maximal same-label runs as (label, first index, last index)."""
    runs: list[tuple[str | None, int, int]] = []
    for i, a in enumerate(seq):
        if runs and runs[-1][0] == a.state_label:
            runs[-1] = (a.state_label, runs[-1][1], i)
        else:
            runs.append((a.state_label, i, i))
    return runs


def orderings(
    new_allocs: list[Allocation],
    ledger: Ledger,
    kinds: dict[str, ResourceKind],
    stn: Stn,
) -> list[Candidate]:
    """Cross-product of per-resource slot choices for one action.

    Empty result means the action cannot be placed at this node (dead end).
    """
    per_res: list[list[tuple[str, int, Allocation, list[DiffConstraint]]]] = []
    for alloc in new_allocs:
        opts = slot_candidates(kinds[alloc.res], ledger.entries(alloc.res), alloc, stn)
        if not opts:
            return []
        per_res.append([(alloc.res, i, alloc, cons) for i, cons in opts])
    out = []
    for combo in itertools.product(*per_res):
        constraints: list[DiffConstraint] = []
        placements = []
        for res, index, alloc, cons in combo:
            constraints += cons
            placements.append((res, index, alloc))
        out.append(Candidate(tuple(constraints), tuple(placements)))
    return out


# -- semantics audit ---------------------------------------------------------


def kind_constraints(kind: ResourceKind, seq: tuple[Allocation, ...]) -> list[DiffConstraint]:
    """Full constraint set a committed sequence must satisfy, for audits."""
    cons: list[DiffConstraint] = []
    n = len(seq)
    if isinstance(kind, (UnitCapacity, Cyclic)):
        for i in range(n - 1):
            cons += _prec(seq[i], seq[i + 1])
    elif isinstance(kind, MultiCapacity):
        for i in range(n - 1):
            cons += _start_order(seq[i], seq[i + 1])
            cons += _end_order(seq[i], seq[i + 1])
        for j in range(kind.k, n):
            cons += _prec(seq[j - kind.k], seq[j])
    elif isinstance(kind, StateResource):
        runs = _runs(seq)
        for r in range(len(runs) - 1):
            for a in seq[runs[r][1] : runs[r][2] + 1]:
                for b in seq[runs[r + 1][1] : runs[r + 1][2] + 1]:
                    cons += _prec(a, b)
    return cons


def audit_intervals(
    kind: ResourceKind, intervals: list[tuple[float, float, str | None]]
) -> list[str]:
    """Check concrete executed intervals against a kind's semantics.

    Intervals are (start, end, state_label) with half-open [start, end)
    occupancy. Returns a list of violation descriptions (empty = clean).
    """
    bad = []
    ordered = sorted(intervals)
    if isinstance(kind, (UnitCapacity, Cyclic)):
        for (s1, e1, _), (s2, e2, _) in zip(ordered, ordered[1:]):
            if s2 < e1:
                bad.append(f"overlap [{s1},{e1}) vs [{s2},{e2})")
        if isinstance(kind, Cyclic):
            last = max((e for _, e, _ in ordered), default=0)
            for bs, be in cyclic_windows(kind, int(last) + 1):
                for s, e, _ in ordered:
                    if s < be and bs < e:
                        bad.append(f"allocation [{s},{e}) inside busy window [{bs},{be})")
    elif isinstance(kind, MultiCapacity):
        k = kind.k
        for i in range(len(ordered)):
            overlapping = sum(
                1 for j in range(len(ordered)) if i != j and ordered[j][0] < ordered[i][1] and ordered[i][0] < ordered[j][1]
            )
            if overlapping >= k:
                bad.append(f"more than {k} concurrent allocations at [{ordered[i][0]},{ordered[i][1]})")
        for (s1, e1, _), (s2, e2, _) in zip(ordered, ordered[1:]):
            if s1 <= s2 and e2 < e1:
                bad.append(f"FIFO violation: [{s1},{e1}) vs [{s2},{e2})")
    elif isinstance(kind, StateResource):
        for i, (s1, e1, l1) in enumerate(ordered):
            for s2, e2, l2 in ordered[i + 1 :]:
                if s2 < e1 and s1 < e2 and l1 != l2:
                    bad.append(f"overlapping different labels {l1}/{l2}")
    return bad


def cyclic_kinds(model: MachineModel) -> dict[str, Cyclic]:
    return {r: k for r, k in model.resources.items() if isinstance(k, Cyclic)}

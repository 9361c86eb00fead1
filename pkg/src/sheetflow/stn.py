"""Simple temporal network with arc-consistency propagation.

The network keeps one feasible window [earliest, latest] per time point,
measured from the reference point t0 (id 0, pinned at [0, 0]). Constraints are
binary differences lb <= to - from <= ub. Adding a constraint propagates over a
work list until the windows are arc consistent again; propagation only ever
shrinks windows, and an emptied window or a work-list pop count exceeding the
point count (a Bellman-Ford style bound) reports inconsistency. There is no
constraint retraction: speculative work forks the network first.

Plans in this domain are mostly rigid: meet-in-time constraints, fixed
durations and allocation offsets are all exact differences. Every exact
constraint therefore merges its endpoints into one rigid class (union-find
with offsets), and windows live only on class representatives. Propagation
runs over the quotient graph, which stays tiny even when thousands of points
are alive; clamping a plan simply merges it into t0's class.

Forking is cheap on purpose: six flat lists copied (O(points)); the per-root
adjacency holds immutable tuples of arc records shared between parent and
child, so a fork never copies the arcs themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .ticks import INF, NEG_INF

TimePointId = int

T0: TimePointId = 0


class Verdict(Enum):
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"

    def __bool__(self) -> bool:
        return self is Verdict.CONSISTENT


@dataclass(frozen=True)
class DiffConstraint:
    """lb <= dst - src <= ub; lb may be -inf, ub may be +inf."""

    src: TimePointId
    dst: TimePointId
    lb: float
    ub: float

    def __post_init__(self) -> None:
        if self.lb > self.ub:
            raise ValueError(f"constraint with lb {self.lb} > ub {self.ub}")
        if self.lb == INF or self.ub == NEG_INF:
            raise ValueError("degenerate infinite bound")


def before(a: TimePointId, b: TimePointId) -> DiffConstraint:
    """Precedence a <= b (touching allowed)."""
    return DiffConstraint(a, b, 0, INF)


def exact(a: TimePointId, b: TimePointId, gap: float) -> DiffConstraint:
    """dst - src == gap."""
    return DiffConstraint(a, b, gap, gap)


def window(p: TimePointId, lo: float, hi: float) -> DiffConstraint:
    """Unary bound on p relative to t0."""
    return DiffConstraint(T0, p, lo, hi)


class Stn:
    __slots__ = ("_lo", "_hi", "_rep", "_off", "_adj", "_free", "_consistent", "_nclasses")

    def __init__(self) -> None:
        self._lo: list[float] = [0]
        self._hi: list[float] = [0]
        self._rep: list[int] = [0]
        self._off: list[float] = [0]
        # per-root tuple of (other, lb, ub, forward, me) arc views; shared on fork
        self._adj: list[tuple] = [()]
        self._free: list[int] = []
        self._consistent = True
        self._nclasses = 1

    # -- union-find with offsets --------------------------------------------

    def _find(self, p: int) -> tuple[int, float]:
        """(class root, t_p - t_root), with path compression."""
        rep, off = self._rep, self._off
        root = p
        delta = 0
        while rep[root] != root:
            delta += off[root]
            root = rep[root]
        q, dq = p, delta
        while rep[q] != root:
            nxt, noff = rep[q], off[q]
            rep[q] = root
            off[q] = dq
            dq -= noff
            q = nxt
        return root, delta

    # -- construction ------------------------------------------------------

    def add_point(self) -> TimePointId:
        self._nclasses += 1
        if self._free:
            p = self._free.pop()
        else:
            p = len(self._lo)
            self._lo.append(0)
            self._hi.append(INF)
            self._rep.append(p)
            self._off.append(0)
            self._adj.append(())
            return p
        self._lo[p] = 0
        self._hi[p] = INF
        self._rep[p] = p
        self._off[p] = 0
        self._adj[p] = ()
        return p

    def add_constraint(self, c: DiffConstraint) -> Verdict:
        return self.add_constraints((c,))

    def add_constraints(self, cons: Iterable[DiffConstraint]) -> Verdict:
        """Add a batch of constraints with a single propagation at the end."""
        if not self._consistent:
            return Verdict.INCONSISTENT
        seeds: list[int] = []
        for c in cons:
            ru, du = self._find(c.src)
            rv, dv = self._find(c.dst)
            # on the roots: lb + du - dv <= t_rv - t_ru <= ub + du - dv
            lb = c.lb if c.lb == NEG_INF else c.lb + du - dv
            ub = c.ub if c.ub == INF else c.ub + du - dv
            if ru == rv:
                if lb <= 0 <= ub:
                    continue
                self._consistent = False
                return Verdict.INCONSISTENT
            if lb == ub:
                if not self._union(ru, rv, lb):
                    self._consistent = False
                    return Verdict.INCONSISTENT
                # seed the surviving root: the merge may have tightened it,
                # and its newly internal arcs still need validation
                seeds.append(ru)
                continue
            # keep the root classes separate; store the arc on both roots
            self._adj[ru] = self._adj[ru] + ((c.dst, c.lb, c.ub, True, c.src),)
            self._adj[rv] = self._adj[rv] + ((c.src, c.lb, c.ub, False, c.dst),)
            lo, hi = self._lo, self._hi
            nlo, nhi = lo[ru] + lb, hi[ru] + ub
            if nlo > lo[rv] or nhi < hi[rv]:
                lo[rv] = max(lo[rv], nlo)
                hi[rv] = min(hi[rv], nhi)
                if lo[rv] > hi[rv]:
                    self._consistent = False
                    return Verdict.INCONSISTENT
                seeds.append(rv)
            nlo, nhi = lo[rv] - ub, hi[rv] - lb
            if nlo > lo[ru] or nhi < hi[ru]:
                lo[ru] = max(lo[ru], nlo)
                hi[ru] = min(hi[ru], nhi)
                if lo[ru] > hi[ru]:
                    self._consistent = False
                    return Verdict.INCONSISTENT
                seeds.append(ru)
        if not seeds:
            return Verdict.CONSISTENT
        roots = {self._find(s)[0] for s in seeds}
        return self._propagate(roots)

    def _union(self, ru: int, rv: int, gap: float) -> bool:
        """Merge class rv into ru with t_rv = t_ru + gap (no propagation)."""
        if rv == T0 or (ru != T0 and len(self._adj[rv]) > len(self._adj[ru])):
            ru, rv, gap = rv, ru, -gap
        lo, hi = self._lo, self._hi
        nlo = max(lo[ru], lo[rv] - gap)
        nhi = min(hi[ru], hi[rv] - gap)
        if nlo > nhi:
            return False
        self._rep[rv] = ru
        self._off[rv] = gap
        self._adj[ru] = self._adj[ru] + self._adj[rv]
        self._adj[rv] = ()
        lo[ru], hi[ru] = nlo, nhi
        self._nclasses -= 1
        return True

    def constrain(self, src: TimePointId, dst: TimePointId, lb: float, ub: float) -> Verdict:
        return self.add_constraint(DiffConstraint(src, dst, lb, ub))

    def clamp(self, p: TimePointId) -> Verdict:
        """Fix p at its current earliest value.

        Guaranteed consistent when the network is consistent: the earliest
        value lies inside every window it interacts with, so pinning it cannot
        empty one.
        """
        lo, hi = self.window_of(p)
        if lo == hi:
            return Verdict.CONSISTENT if self._consistent else Verdict.INCONSISTENT
        return self.add_constraint(DiffConstraint(T0, p, lo, lo))

    # -- queries -----------------------------------------------------------

    @property
    def consistent(self) -> bool:
        return self._consistent

    def earliest(self, p: TimePointId) -> float:
        root, delta = self._find(p)
        return self._lo[root] + delta

    def latest(self, p: TimePointId) -> float:
        root, delta = self._find(p)
        return self._hi[root] + delta

    def window_of(self, p: TimePointId) -> tuple[float, float]:
        root, delta = self._find(p)
        return self._lo[root] + delta, self._hi[root] + delta

    def num_points(self) -> int:
        return len(self._lo) - len(self._free)

    def point_ids(self) -> list[TimePointId]:
        dead = set(self._free)
        return [p for p in range(len(self._lo)) if p not in dead]

    def arcs(self) -> list[DiffConstraint]:
        """Stored arcs plus synthesized exact arcs for rigid-class members."""
        out = []
        for r in self.point_ids():
            for other, lb, ub, fwd, me in self._adj[r]:
                if fwd:
                    out.append(DiffConstraint(me, other, lb, ub))
        for p in self.point_ids():
            root, delta = self._find(p)
            if root != p:
                out.append(DiffConstraint(root, p, delta, delta))
        return out

    def dump(self) -> str:
        """Textual listing for golden-file tests: 'point <id>: [lb, ub]'."""
        lines = []
        for p in self.point_ids():
            lo, hi = self.window_of(p)
            lines.append(f"point {p}: [{lo}, {hi}]")
        return "\n".join(lines)

    # -- propagation -------------------------------------------------------

    def _propagate(self, seeds: Iterable[int]) -> Verdict:
        import heapq

        lo, hi, adj = self._lo, self._hi, self._adj
        find = self._find
        # class membership is stable during propagation: memoize lookups
        memo: dict[int, tuple[int, float]] = {}
        # Bellman-Ford bound: a class re-entering the work list more than
        # the number of live classes can only be riding a negative cycle
        limit = self._nclasses + 1
        pop_count: dict[int, int] = {}
        # earliest-time-first ordering: influences mostly flow forward in
        # time, so each class usually settles before it pops
        queue = [(lo[r], r) for r in dict.fromkeys(seeds)]
        heapq.heapify(queue)
        queued = {r for _, r in queue}
        while queue:
            key, r = heapq.heappop(queue)
            if r not in queued:
                continue
            if key < lo[r]:
                continue  # stale entry; a fresher one is queued
            queued.discard(r)
            n = pop_count.get(r, 0) + 1
            if n > limit:
                self._consistent = False
                return Verdict.INCONSISTENT
            pop_count[r] = n
            rlo, rhi = lo[r], hi[r]
            for other, lb, ub, fwd, me in adj[r]:
                hit = memo.get(me)
                if hit is None:
                    hit = memo[me] = find(me)
                rm, dm = hit
                if rm != r:
                    continue  # record superseded by a later merge
                hit = memo.get(other)
                if hit is None:
                    hit = memo[other] = find(other)
                ro, do = hit
                if ro == r:
                    # both endpoints in one rigid class: their difference is
                    # fixed, so the arc either holds forever or fails now
                    diff = (do - dm) if fwd else (dm - do)
                    if not lb <= diff <= ub:
                        self._consistent = False
                        return Verdict.INCONSISTENT
                    continue
                if fwd:
                    # me --[lb,ub]--> other
                    nlo = rlo + dm + lb - do
                    nhi = rhi + dm + ub - do
                else:
                    # other --[lb,ub]--> me, seen in reverse
                    nlo = rlo + dm - ub - do
                    nhi = rhi + dm - lb - do
                changed = False
                if nlo > lo[ro]:
                    lo[ro] = nlo
                    changed = True
                if nhi < hi[ro]:
                    hi[ro] = nhi
                    changed = True
                if not changed:
                    continue
                if lo[ro] > hi[ro]:
                    self._consistent = False
                    return Verdict.INCONSISTENT
                # push even when already queued: the fresher (larger) key wins
                # and the stale entry is skipped on pop
                queued.add(ro)
                heapq.heappush(queue, (lo[ro], ro))
        return Verdict.CONSISTENT

    # -- fork / gc ---------------------------------------------------------

    def fork(self) -> "Stn":
        """Logically independent copy; arc records stay shared."""
        child = Stn.__new__(Stn)
        child._lo = self._lo.copy()
        child._hi = self._hi.copy()
        child._rep = self._rep.copy()
        child._off = self._off.copy()
        child._adj = self._adj.copy()
        child._free = self._free.copy()
        child._consistent = self._consistent
        child._nclasses = self._nclasses
        return child

    def collect_garbage(self, horizon: float, live: set[TimePointId]) -> int:
        """Drop points wholly in the past (latest < horizon) and not live.

        Classes are re-rooted at surviving members, survivors' windows are
        rematerialized as fresh unary arcs, and arcs through removed points
        are rewritten onto their class roots, so the remaining network is
        self-contained and reproduces the current windows from scratch.
        """
        dead = set(self._free)
        alive = [p for p in range(1, len(self._lo)) if p not in dead]
        removed = [p for p in alive if p not in live and self.latest(p) < horizon]
        if not removed:
            return 0
        gone = dead | set(removed)
        survivors = [p for p in alive if p not in gone]

        # group survivors by their current class
        groups: dict[int, list[tuple[int, float]]] = {}
        for p in survivors + [T0]:
            root, delta = self._find(p)
            groups.setdefault(root, []).append((p, delta))
        new_root_of: dict[int, tuple[int, float]] = {}  # old root -> (new root, its delta)
        for old_root, members in groups.items():
            if any(p == T0 for p, _ in members):
                pick = (T0, 0.0)
            else:
                pick = min(members)
            new_root_of[old_root] = pick

        # collect arcs before rewiring; keep only those rewritable onto
        # surviving classes
        kept_arcs: list[tuple[int, int, float, float]] = []
        seen = set(gone)
        for r in range(len(self._adj)):
            for other, lb, ub, fwd, me in self._adj[r]:
                if not fwd:
                    continue
                rm, dm = self._find(me)
                ro, do = self._find(other)
                if rm not in new_root_of or ro not in new_root_of:
                    continue
                a, da = (me, 0.0) if me not in seen else (
                    new_root_of[rm][0],
                    dm - new_root_of[rm][1],
                )
                b, db = (other, 0.0) if other not in seen else (
                    new_root_of[ro][0],
                    do - new_root_of[ro][1],
                )
                if a in gone or b in gone:
                    continue
                # lb <= t_other - t_me <= ub with t_me = t_a + da, t_other = t_b + db
                nlb = lb if lb == NEG_INF else lb + da - db
                nub = ub if ub == INF else ub + da - db
                kept_arcs.append((a, b, nlb, nub))

        # rebuild union-find, windows and adjacency
        windows = {p: self.window_of(p) for p in survivors}
        for p in range(len(self._lo)):
            self._adj[p] = ()
        for old_root, members in groups.items():
            root, droot = new_root_of[old_root]
            rlo, rhi = (0, 0) if root == T0 else windows[root]
            self._lo[root] = rlo
            self._hi[root] = rhi
            self._rep[root] = root
            self._off[root] = 0
            for p, delta in members:
                if p == root:
                    continue
                self._rep[p] = root
                self._off[p] = delta - droot
        unary = []
        for old_root in groups:
            root, _ = new_root_of[old_root]
            if root != T0:
                rlo, rhi = windows[root]
                unary.append((root, rlo, rhi))
        self._adj[T0] = tuple((p, lo, hi, True, T0) for p, lo, hi in unary)
        for p, lo, hi in unary:
            self._adj[p] = ((T0, lo, hi, False, p),)
        for a, b, lb, ub in kept_arcs:
            ra, _ = self._find(a)
            rb, _ = self._find(b)
            if ra == rb:
                continue
            self._adj[ra] = self._adj[ra] + ((b, lb, ub, True, a),)
            self._adj[rb] = self._adj[rb] + ((a, lb, ub, False, b),)
        self._free.extend(removed)
        self._nclasses = len(groups)
        return len(removed)


# -- reference propagator ----------------------------------------------------


def idpc_oracle(
    constraints: list[DiffConstraint], num_points: int | None = None
) -> tuple[Verdict, "object"]:
    """Incremental path-consistency reference propagator.

    Maintains the full pairwise distance matrix, closing it after every added
    constraint. Complete but quadratic per constraint; kept as a second
    opinion for the arc-consistency network and for runtime comparisons, not
    used in production.

    Returns (verdict, matrix) where matrix[i][j] bounds t_j - t_i from above.
    Every point's implicit t >= t0 constraint is included, so the matrix
    projects onto the same windows the Stn maintains: latest(p) = d[0][p],
    earliest(p) = -d[p][0].
    """
    import numpy as np

    if num_points is None:
        num_points = 1 + max((max(c.src, c.dst) for c in constraints), default=0)
    n = num_points
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    if n > 1:
        d[1:, 0] = 0.0  # every point at or after t0

    def relax_edge(u: int, v: int, w: float) -> bool:
        if w >= d[u, v]:
            return True
        # route every pair through the improved edge
        np.minimum(d, d[:, u, None] + (w + d[v, None, :]), out=d)
        return bool((np.diagonal(d) >= 0).all())

    for c in constraints:
        if c.ub != INF and not relax_edge(c.src, c.dst, c.ub):
            return Verdict.INCONSISTENT, d
        if c.lb != NEG_INF and not relax_edge(c.dst, c.src, -c.lb):
            return Verdict.INCONSISTENT, d
    return Verdict.CONSISTENT, d

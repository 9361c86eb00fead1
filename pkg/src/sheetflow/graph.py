"""Temporal planning graph with logical mutexes and resource adjustment.

Produces the admissible makespan-to-go estimate that drives the per-sheet A*
search, the cost-to-go table for the weighted objective, and the multi-table
scheme for constrained action sets.

The graph is serial: two real actions are always mutually exclusive, so only
fact-fact pair times are stored and noop-vs-action exclusions are folded into
the pair update on the fly. Expansion is a monotone label-correcting fixpoint
over numpy arrays; values start at infinity, only ever decrease, and integer
ticks guarantee termination.

Resource adjustment delays an action's earliest graph time until its
allocations fit among the reservations already in the ledger (the CheckEarliest
walk). The walk reads a per-episode snapshot of allocation windows expressed
relative to the episode origin; by design it runs once per allocation list, so
a residual conflict on an earlier resource may survive - that approximation
trades a little accuracy for speed. Set ``iterate_adjust`` to repeat the pass
to a fixpoint instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .model import GroundAction
from .ticks import INF

Snapshot = dict[str, list[tuple[float, float]]]


@dataclass(frozen=True)
class HeuristicConfig:
    logical_mutex: bool = True
    resource_adjust: bool = True
    iterate_adjust: bool = False


def check_earliest(rows: list[tuple[float, float]], t: float, d: float) -> float:
    """Earliest time >= t where a d-long slot fits among existing allocations.

    `rows` are (latest_start, earliest_end) pairs in temporal order. The slot
    fits before allocation k when k can still start at or after the slot's
    end; otherwise the candidate advances to k's earliest end. Non-strict
    comparison because occupancy is half-open: touching is allowed.
    """
    t_min = t
    for latest_start, earliest_end in rows:
        if latest_start >= t_min + d:
            break
        if earliest_end > t_min:
            t_min = earliest_end
    return t_min


class PlanningGraph:
    def __init__(
        self,
        actions: list[GroundAction],
        initial: frozenset[int],
        num_facts: int,
        config: HeuristicConfig = HeuristicConfig(),
        snapshot: Snapshot | None = None,
        origin: float = 0,
    ) -> None:
        self.config = config
        self.actions = actions
        self.origin = origin
        self._snapshot: Snapshot = snapshot or {}
        n = num_facts
        self.t_fact = np.full(n, np.inf)
        self.t_pair = np.full((n, n), np.inf)
        self.t_act = np.full(len(actions), np.inf)
        self.fixpoint = False
        init = [f for f in initial if f < n]
        self.t_fact[init] = 0
        self.t_pair[np.ix_(init, init)] = 0
        self._pre = [np.fromiter(a.pre_pos, dtype=int) for a in actions]
        self._add = [np.fromiter(a.add, dtype=int) for a in actions]
        self._del = [np.fromiter(a.delete, dtype=int) for a in actions]
        self._adjust_cache: dict[tuple[int, float], float] = {}

    # -- resource adjustment ------------------------------------------------

    def _rows(self, res: str) -> list[tuple[float, float]]:
        rows = self._snapshot.get(res)
        if rows is None:
            return []
        return rows

    def adjust_action_start(self, a: GroundAction, t_a: float) -> float:
        """Single pass over a's allocations in declaration order (origin-relative)."""
        if not a.allocs or t_a == INF:
            return t_a
        key = (a.id, t_a)
        cached = self._adjust_cache.get(key)
        if cached is not None:
            return cached
        t = t_a
        while True:
            t_before = t
            for spec in a.allocs:
                slot = check_earliest(self._rows(spec.res), t + spec.offset, spec.dur)
                t = slot - spec.offset
            if not self.config.iterate_adjust or t == t_before:
                break
        self._adjust_cache[key] = t
        return t

    # -- expansion ----------------------------------------------------------

    def expand(self, goals: frozenset[int] | None = None) -> None:
        """Sweep to a fixpoint, or stop early once the goals and their pairs
        are all finite."""
        if self.fixpoint or (goals is not None and self._goals_done(goals)):
            return
        t_fact, t_pair, t_act = self.t_fact, self.t_pair, self.t_act
        use_pairs = self.config.logical_mutex
        adjust = self.config.resource_adjust
        n = len(t_fact)
        for _ in range(100_000):
            changed = False
            for k, a in enumerate(self.actions):
                pre = self._pre[k]
                if pre.size:
                    raw = t_fact[pre].max()
                    if raw == np.inf:
                        continue
                    if use_pairs:
                        raw = max(raw, t_pair[np.ix_(pre, pre)].max())
                        if raw == np.inf:
                            continue
                else:
                    raw = 0.0
                raw = max(raw, float(a.setup))
                if adjust:
                    raw = self.adjust_action_start(a, raw)
                if raw < t_act[k]:
                    t_act[k] = raw
                    changed = True
                done = t_act[k] + a.dur_lb
                add = self._add[k]
                if add.size == 0:
                    continue
                upd = done < t_fact[add]
                if upd.any():
                    t_fact[add[upd]] = done
                    changed = True
                if not use_pairs:
                    continue
                # pairs achieved by a alone
                block = t_pair[np.ix_(add, add)]
                if (done < block).any():
                    t_pair[np.ix_(add, add)] = np.minimum(block, done)
                    changed = True
                # pairs achieved with a noop carrying the other fact:
                # non-mutex once a can run alongside noop_g, i.e. a does not
                # delete g and g coexists with every precondition of a
                if pre.size:
                    coexist = t_pair[pre, :].max(axis=0)
                else:
                    coexist = np.zeros(n)
                vec = np.maximum(np.maximum(t_act[k], t_fact), coexist) + a.dur_lb
                dele = self._del[k]
                if dele.size:
                    vec[dele] = np.inf
                rows = t_pair[add, :]
                better = vec[None, :] < rows
                if better.any():
                    t_pair[add, :] = np.minimum(rows, vec[None, :])
                    t_pair[:, add] = t_pair[add, :].T
                    changed = True
            if use_pairs:
                np.fill_diagonal(t_pair, t_fact)
            if not changed:
                self.fixpoint = True
                return
            if goals is not None and self._goals_done(goals):
                return
        raise AssertionError("planning graph failed to converge")

    def _goals_done(self, goals: frozenset[int]) -> bool:
        idx = np.fromiter((g for g in goals if g < len(self.t_fact)), dtype=int)
        if idx.size == 0:
            return True
        if np.isinf(self.t_fact[idx]).any():
            return False
        if self.config.logical_mutex and np.isinf(self.t_pair[np.ix_(idx, idx)]).any():
            return False
        return True

    # -- queries --------------------------------------------------------------

    def estimate(self, goals: frozenset[int]) -> float:
        """Makespan-to-go lower bound; INF signals a dead end.

        Re-expands on demand when some entry is missing and the graph has not
        reached its fixpoint yet.
        """
        if any(g >= len(self.t_fact) for g in goals):
            return INF  # literal interned after the graph was built: unreachable
        if not goals:
            return 0.0
        if not self._goals_done(goals) and not self.fixpoint:
            self.expand(goals)
        idx = np.fromiter(goals, dtype=int)
        d = float(self.t_fact[idx].max())
        if self.config.logical_mutex:
            d = max(d, float(self.t_pair[np.ix_(idx, idx)].max()))
        return d


class CostTable:
    """Admissible cost-to-go: per-fact minimal accumulated action cost from the
    initial state, combined by max over goal facts."""

    def __init__(self, actions: list[GroundAction], initial: frozenset[int], num_facts: int) -> None:
        cost = np.full(num_facts, np.inf)
        init = [f for f in initial if f < num_facts]
        cost[init] = 0.0
        pre = [np.fromiter(a.pre_pos, dtype=int) for a in actions]
        add = [np.fromiter(a.add, dtype=int) for a in actions]
        for _ in range(num_facts + 1):
            changed = False
            for k, a in enumerate(actions):
                base = cost[pre[k]].max() if pre[k].size else 0.0
                if base == np.inf:
                    continue
                reach = base + a.cost
                upd = reach < cost[add[k]]
                if upd.any():
                    cost[add[k][upd]] = reach
                    changed = True
            if not changed:
                break
        self.cost = cost

    def cost_to_go(self, goals: frozenset[int]) -> float:
        if any(g >= len(self.cost) for g in goals):
            return INF
        if not goals:
            return 0.0
        idx = np.fromiter(goals, dtype=int)
        return float(self.cost[idx].max())


@dataclass
class LookupTableSet:
    """Heuristic tables for constrained action sets, keyed by the removed set.

    Tables for removed sets up to size `m` are built on demand and cached for
    the episode. A larger removed set is estimated by the max over its size-m
    subsets, which stays admissible because removing actions only raises
    reachability times.
    """

    actions: list[GroundAction]
    initial: frozenset[int]
    num_facts: int
    config: HeuristicConfig = HeuristicConfig()
    snapshot: Snapshot | None = None
    origin: float = 0
    m: int = 2
    _tables: dict[frozenset[int], PlanningGraph] = field(default_factory=dict)

    def table(self, removed: frozenset[int]) -> PlanningGraph:
        g = self._tables.get(removed)
        if g is None:
            acts = [a for a in self.actions if a.id not in removed]
            g = PlanningGraph(
                acts, self.initial, self.num_facts, self.config, self.snapshot, self.origin
            )
            self._tables[removed] = g
        return g

    def constrained_estimate(self, goals: frozenset[int], removed: frozenset[int]) -> float:
        if len(removed) <= self.m:
            return self.table(removed).estimate(goals)
        best = self.table(frozenset()).estimate(goals)
        for q in combinations(sorted(removed), self.m):
            best = max(best, self.table(frozenset(q)).estimate(goals))
        return best

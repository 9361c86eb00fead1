"""Three-valued regressed logical state and the regression rules.

A state stores the explicitly-true and explicitly-unknown literal sets; every
other literal is false (closed world). Regression runs backward: undo an
action's effects, then union in its preconditions. Effects without a matching
precondition leave the literal unknown, which unifies with anything at the
initial state ("don't care").
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import GroundAction


@dataclass(frozen=True)
class LogicState:
    true: frozenset[int]
    unknown: frozenset[int]

    def __post_init__(self) -> None:
        if self.true & self.unknown:
            raise ValueError("literal both true and unknown")

    def is_false(self, lit: int) -> bool:
        return lit not in self.true and lit not in self.unknown

    def key(self) -> tuple:
        return (self.true, self.unknown)


def applicable(a: GroundAction, state: LogicState) -> bool:
    """Regression applicability.

    (1) no effect contradicts the state, (2) preconditions not re-established
    by the effects must not contradict it either. There is deliberately no
    "some effect must be relevant" filter: a no-op-like action can buy time
    for a resource to free up.
    """
    t, u = state.true, state.unknown
    for x in a.add:
        if x not in t and x not in u:  # x false
            return False
    if a.delete & t:
        return False
    for p in a.pre_pos:
        if p not in t and p not in u and p not in a.delete:  # p false, not undone
            return False
    for p in a.pre_neg:
        if p in t and p not in a.add:
            return False
    return True


def regress(a: GroundAction, state: LogicState) -> LogicState:
    """State before action a, given `state` holds after it. Requires applicable().

    Raises ValueError when the result breaks the true/unknown partition, which
    indicates a malformed action rather than a planner bug.
    """
    t = (state.true - a.add) | a.pre_pos
    u = (state.unknown | a.add | a.delete) - a.pre_pos - a.pre_neg
    return LogicState(frozenset(t), frozenset(u))


def unifies_with_initial(state: LogicState, initial: frozenset[int]) -> bool:
    """True iff the regressed state matches a complete initial state.

    Every true literal must hold in it, every (implicitly) false literal must
    be absent; unknowns match anything.
    """
    if not state.true <= initial:
        return False
    return initial <= (state.true | state.unknown)


def progress(initial: frozenset[int], plan: list[GroundAction]) -> frozenset[int] | None:
    """Forward execution oracle: apply the plan to a complete state.

    Returns the final state, or None when some action's preconditions fail.
    Used to validate plans found by regression.
    """
    state = set(initial)
    for a in plan:
        if not a.pre_pos <= state or (a.pre_neg & state):
            return None
        state -= a.delete
        state |= a.add
    return frozenset(state)


def satisfies(final: frozenset[int], goal: LogicState) -> bool:
    """Does a complete final state satisfy a goal's determinate literals?"""
    if not goal.true <= final:
        return False
    false_hits = {l for l in final if goal.is_false(l)}
    return not false_hits

"""Ground literal interning.

Literals are strings of the form ``Pred(arg1,arg2)``; the canonical sheet
placeholder is the token ``S``. Everything is interned to small integers once
at model load so state sets are frozensets of ints.
"""

from __future__ import annotations

import re

_LIT_RE = re.compile(r"^\s*(!?)\s*([A-Za-z_][\w.\-]*)\s*(?:\(([^()]*)\))?\s*$")


def normalize(text: str) -> tuple[bool, str]:
    """Parse a literal string; returns (negated, canonical form)."""
    m = _LIT_RE.match(text)
    if not m:
        raise ValueError(f"malformed literal: {text!r}")
    neg, pred, args = m.group(1) == "!", m.group(2), m.group(3)
    if args is None or args.strip() == "":
        return neg, pred
    parts = [a.strip() for a in args.split(",")]
    if any(not p for p in parts):
        raise ValueError(f"malformed literal: {text!r}")
    return neg, f"{pred}({','.join(parts)})"


def predicate_of(canonical: str) -> str:
    return canonical.split("(", 1)[0]


class Vocabulary:
    """Bidirectional literal <-> id table."""

    def __init__(self) -> None:
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, canonical: str) -> int:
        lit = self._ids.get(canonical)
        if lit is None:
            lit = len(self._names)
            self._ids[canonical] = lit
            self._names.append(canonical)
        return lit

    def get(self, canonical: str) -> int | None:
        return self._ids.get(canonical)

    def name(self, lit: int) -> str:
        return self._names[lit]

    def names(self, lits) -> list[str]:
        return sorted(self._names[l] for l in lits)

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, canonical: str) -> bool:
        return canonical in self._ids

"""Sheet request wire intake.

Requests arrive as newline-delimited JSON:
``{"type":"sheet","seq":N,"job":J,"initial":[...],"goal":[...],"unknown":[...]}``
Literals use the canonical sheet token ``S``. The goal finisher of a job's
first sheet is typically absent from ``goal`` - the planner chooses it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .literals import normalize, predicate_of
from .model import MachineModel


class RequestError(Exception):
    pass


class MalformedRequest(RequestError):
    pass


class UnknownPredicate(RequestError):
    pass


class DuplicateSeq(RequestError):
    pass


@dataclass(frozen=True)
class SheetRequest:
    seq: int
    job: str
    initial: frozenset[int]
    goal: frozenset[int]
    unknown: frozenset[int]
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def goal_names(self, model: MachineModel) -> list[str]:
        return model.vocab.names(self.goal)


class RequestParser:
    """Parses one connection's request stream, enforcing seq monotonicity."""

    def __init__(self, model: MachineModel) -> None:
        self.model = model
        self._last_seq: int | None = None

    def parse(self, msg: str | dict) -> SheetRequest:
        if isinstance(msg, str):
            try:
                doc = json.loads(msg)
            except json.JSONDecodeError as e:
                raise MalformedRequest(f"bad JSON: {e.msg}") from e
        else:
            doc = msg
        if not isinstance(doc, dict) or doc.get("type") != "sheet":
            raise MalformedRequest("expected a sheet message")
        try:
            seq = int(doc["seq"])
            job = str(doc["job"])
            initial = [str(x) for x in doc["initial"]]
            goal = [str(x) for x in doc["goal"]]
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRequest(f"missing or bad field: {e}") from e
        unknown = [str(x) for x in doc.get("unknown", [])]
        if not goal and not unknown:
            raise MalformedRequest("request with empty goal")
        if self._last_seq is not None and seq <= self._last_seq:
            raise DuplicateSeq(f"seq {seq} after {self._last_seq}")
        self._last_seq = seq
        meta = {k: v for k, v in doc.items() if k not in {"type", "seq", "job", "initial", "goal", "unknown"}}
        return SheetRequest(
            seq=seq,
            job=job,
            initial=self._intern(initial, negatable=False),
            goal=self._intern(goal, negatable=False),
            unknown=self._intern(unknown, negatable=False),
            meta=meta,
        )

    def _intern(self, texts: list[str], negatable: bool) -> frozenset[int]:
        out = set()
        for text in texts:
            try:
                neg, canon = normalize(text)
            except ValueError as e:
                raise MalformedRequest(str(e)) from e
            if neg and not negatable:
                raise MalformedRequest(f"negated literal not allowed here: {text}")
            if predicate_of(canon) not in self.model.predicates:
                raise UnknownPredicate(canon)
            out.add(self.model.vocab.intern(canon))
        return frozenset(out)


def serialize_request(req: SheetRequest, model: MachineModel) -> str:
    """Canonical wire form: sorted literals, sorted keys."""
    doc = {
        "type": "sheet",
        "seq": req.seq,
        "job": req.job,
        "initial": model.vocab.names(req.initial),
        "goal": model.vocab.names(req.goal),
        "unknown": model.vocab.names(req.unknown),
    }
    doc.update(req.meta)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))

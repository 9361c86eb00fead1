"""Scenario script DSL.

Jobs come first: `<count><s|d><c|m>` groups, `+` concatenating groups within
one job, `;` separating concurrent jobs. Timed directives follow:
`@<seconds> jam <seq>` or `@<seconds> module <name> <on|off>`. Options close
the line: `w1=<f>`, `w2=<f>`, `policy=<purge|hold>`.

Example: `3sm;2dc @1.5 module E2 off w1=1 w2=0.5 policy=purge`
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .model import MachineModel
from .requests import SheetRequest

_GROUP_RE = re.compile(r"^(\d+)([sd])([cm])$")


class ScenarioSyntaxError(Exception):
    def __init__(self, msg: str, pos: int) -> None:
        super().__init__(f"{msg} (at token {pos})")
        self.pos = pos


@dataclass(frozen=True)
class SheetGroup:
    count: int
    sides: str  # "s" | "d"
    color: str  # "c" | "m"


@dataclass(frozen=True)
class Directive:
    at_s: float
    kind: str  # "jam" | "module"
    target: str
    state: str | None = None


@dataclass
class Scenario:
    jobs: list[list[SheetGroup]] = field(default_factory=list)
    directives: list[Directive] = field(default_factory=list)
    w1: float = 1.0
    w2: float = 0.0
    policy: str = "purge"

    def sheet_count(self) -> int:
        return sum(g.count for job in self.jobs for g in job)


def parse_scenario(text: str) -> Scenario:
    tokens = text.split()
    if not tokens:
        raise ScenarioSyntaxError("empty scenario", 0)
    sc = Scenario()
    for job_text in tokens[0].split(";"):
        job: list[SheetGroup] = []
        for part in job_text.split("+"):
            m = _GROUP_RE.match(part)
            if not m:
                raise ScenarioSyntaxError(f"bad sheet group {part!r}", 0)
            count = int(m.group(1))
            if count < 1:
                raise ScenarioSyntaxError(f"count must be >= 1 in {part!r}", 0)
            job.append(SheetGroup(count, m.group(2), m.group(3)))
        sc.jobs.append(job)
    i = 1
    while i < len(tokens):
        tok = tokens[i]
        if tok.startswith("@"):
            try:
                at = float(tok[1:])
            except ValueError:
                raise ScenarioSyntaxError(f"bad time {tok!r}", i) from None
            if at < 0:
                raise ScenarioSyntaxError("directive time must be >= 0", i)
            if i + 1 >= len(tokens):
                raise ScenarioSyntaxError("directive missing kind", i)
            kind = tokens[i + 1]
            if kind == "jam":
                if i + 2 >= len(tokens):
                    raise ScenarioSyntaxError("jam missing seq", i)
                sc.directives.append(Directive(at, "jam", tokens[i + 2]))
                i += 3
            elif kind == "module":
                if i + 3 >= len(tokens):
                    raise ScenarioSyntaxError("module directive needs name and on|off", i)
                state = tokens[i + 3]
                if state not in ("on", "off"):
                    raise ScenarioSyntaxError(f"bad module state {state!r}", i)
                sc.directives.append(Directive(at, "module", tokens[i + 2], state))
                i += 4
            else:
                raise ScenarioSyntaxError(f"unknown directive {kind!r}", i)
        elif "=" in tok:
            key, _, value = tok.partition("=")
            if key == "w1":
                sc.w1 = float(value)
            elif key == "w2":
                sc.w2 = float(value)
            elif key == "policy":
                if value not in ("purge", "hold"):
                    raise ScenarioSyntaxError(f"bad policy {value!r}", i)
                sc.policy = value
            else:
                raise ScenarioSyntaxError(f"unknown option {key!r}", i)
            i += 1
        else:
            raise ScenarioSyntaxError(f"unexpected token {tok!r}", i)
    return sc


def format_scenario(sc: Scenario) -> str:
    jobs = ";".join(
        "+".join(f"{g.count}{g.sides}{g.color}" for g in job) for job in sc.jobs
    )
    parts = [jobs]
    for d in sc.directives:
        t = f"{d.at_s:g}"
        if d.kind == "jam":
            parts.append(f"@{t} jam {d.target}")
        else:
            parts.append(f"@{t} module {d.target} {d.state}")
    if sc.w1 != 1.0:
        parts.append(f"w1={sc.w1:g}")
    if sc.w2 != 0.0:
        parts.append(f"w2={sc.w2:g}")
    if sc.policy != "purge":
        parts.append(f"policy={sc.policy}")
    return " ".join(parts)


def build_requests(sc: Scenario, model: MachineModel) -> list[SheetRequest]:
    """Round-robin draw across concurrent jobs, one sheet at a time."""
    vocab = model.vocab
    per_job: list[list[tuple[str, str]]] = []
    for job in sc.jobs:
        sheets = []
        for g in job:
            sheets.extend([(g.sides, g.color)] * g.count)
        per_job.append(sheets)
    requests = []
    seq = 0
    cursors = [0] * len(per_job)
    while any(c < len(s) for c, s in zip(cursors, per_job)):
        for j, sheets in enumerate(per_job):
            if cursors[j] >= len(sheets):
                continue
            sides, color = sheets[cursors[j]]
            cursors[j] += 1
            seq += 1
            color_name = "color" if color == "c" else "mono"
            goal = {vocab.intern(f"Printed(S,Side1,{color_name})")}
            if sides == "d":
                goal.add(vocab.intern(f"Printed(S,Side2,{color_name})"))
            requests.append(
                SheetRequest(
                    seq=seq,
                    job=f"job{j + 1}",
                    initial=frozenset(
                        {vocab.intern("Loc(S,Source)"), vocab.intern("SideUp(S,Side1)")}
                    ),
                    goal=frozenset(goal),
                    unknown=frozenset(),
                )
            )
    return requests

"""Machine model loading and compilation to grounded temporal actions.

A machine is a JSON document of modules, port connections, resources,
background facts and a delta-E matrix. Each module capability compiles to one
grounded action per parameter combination; sheet movement is implicit in the
capability's from/to ports. All times are converted to integer ticks here;
everything downstream is integer arithmetic.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .literals import Vocabulary, normalize, predicate_of
from .ticks import ms_to_ticks

SHEET = "S"
SOURCE_LOCATION = "Loc(S,Source)"


class ModelError(Exception):
    pass


class ParseError(ModelError):
    def __init__(self, msg: str, line: int = 0, col: int = 0) -> None:
        super().__init__(f"{msg} (line {line}, col {col})" if line else msg)
        self.line, self.col = line, col


class DanglingPort(ModelError):
    pass


class NonIntegralDuration(ModelError):
    pass


class NegativeCost(ModelError):
    pass


# -- resource kinds ----------------------------------------------------------


@dataclass(frozen=True)
class UnitCapacity:
    pass


@dataclass(frozen=True)
class Cyclic:
    period: int
    offset: int
    busy: int

    def __post_init__(self) -> None:
        if not 0 <= self.busy < self.period:
            raise ModelError(f"cyclic busy {self.busy} must be < period {self.period}")


@dataclass(frozen=True)
class MultiCapacity:
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ModelError("multi-capacity k must be >= 1")


@dataclass(frozen=True)
class StateResource:
    labels: tuple[str, ...]


ResourceKind = UnitCapacity | Cyclic | MultiCapacity | StateResource


def cyclic_windows(kind: Cyclic, upto: int) -> list[tuple[int, int]]:
    """Busy intervals [start, start+busy) with start < upto."""
    if kind.busy == 0:
        return []
    out = []
    start = kind.offset
    while start < upto:
        out.append((start, start + kind.busy))
        start += kind.period
    return out


# -- grounded actions --------------------------------------------------------


@dataclass(frozen=True)
class AllocationSpec:
    res: str
    offset: int
    dur: int  # for span allocations: dur_lb - offset (heuristic lower bound)
    state_label: str | None = None
    span: bool = False  # occupancy runs to the action's (variable) end


@dataclass(frozen=True)
class GroundAction:
    id: int
    name: str
    module: str
    capability: str
    pre_pos: frozenset[int]
    pre_neg: frozenset[int]
    add: frozenset[int]
    delete: frozenset[int]
    dur_lb: int
    dur_ub: int
    setup: int
    allocs: tuple[AllocationSpec, ...]
    cost: float = 0.0
    is_print: bool = False
    color: str | None = None

    def __repr__(self) -> str:
        return f"GroundAction({self.id}:{self.name})"


@dataclass
class ModuleInfo:
    name: str
    kind: str
    x: float = 0.0
    y: float = 0.0
    rotation: float = 0.0


@dataclass
class MachineModel:
    name: str
    vocab: Vocabulary
    modules: dict[str, ModuleInfo]
    connections: dict[tuple[str, str], str]  # (module, out port) -> dest module
    resources: dict[str, ResourceKind]
    background: frozenset[int]
    t_delay: int
    actions: list[GroundAction] = field(default_factory=list)
    delta_e: dict[tuple[str, str], float] = field(default_factory=dict)
    productivity_ppm: float | None = None
    warnings: list[str] = field(default_factory=list)
    predicates: set[str] = field(default_factory=set)
    allow_alloc_overrun: bool = False

    def location(self, module: str) -> int:
        return self.vocab.intern(f"Loc({SHEET},{module})")

    def finishers(self) -> list[str]:
        return [m.name for m in self.modules.values() if m.kind == "finisher"]

    def purge_trays(self) -> list[str]:
        return [m.name for m in self.modules.values() if m.kind == "purge"]

    def engines(self) -> list[str]:
        return [m.name for m in self.modules.values() if m.kind == "engine"]

    def actions_of_module(self, module: str) -> list[GroundAction]:
        return [a for a in self.actions if a.module == module]

    def reachable_finishers(self) -> set[str]:
        """Finisher/purge modules reachable from the source over the port graph."""
        reach = {"Source"}
        frontier = ["Source"]
        by_from: dict[str, list[str]] = {}
        for a in self.actions:
            src = _action_from_location(self, a)
            by_from.setdefault(src, []).append(_action_to_location(self, a))
        while frontier:
            loc = frontier.pop()
            for nxt in by_from.get(loc, []):
                if nxt not in reach:
                    reach.add(nxt)
                    frontier.append(nxt)
        sinks = set(self.finishers()) | set(self.purge_trays())
        return {m for m in sinks if m in reach}

    def delta_e_of(self, e1: str, e2: str) -> float:
        if e1 == e2:
            return 0.0
        return self.delta_e.get((e1, e2), 0.0)

    def with_delta_e(self, matrix: dict[tuple[str, str], float]) -> "MachineModel":
        """New model version with a swapped delta-E matrix (applied between episodes)."""
        import copy

        clone = copy.copy(self)
        clone.delta_e = dict(matrix)
        return clone


def _action_from_location(model: MachineModel, a: GroundAction) -> str:
    for lit in a.pre_pos:
        name = model.vocab.name(lit)
        if name.startswith("Loc("):
            return name[4:-1].split(",")[1]
    return "Source"


def _action_to_location(model: MachineModel, a: GroundAction) -> str:
    for lit in a.add:
        name = model.vocab.name(lit)
        if name.startswith("Loc("):
            return name[4:-1].split(",")[1]
    return "Source"


# -- compilation -------------------------------------------------------------


def compile_model(source: str | dict, name: str = "machine") -> MachineModel:
    """Compile model JSON text (or an already-parsed document) to ground actions."""
    if isinstance(source, str):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, e.lineno, e.colno) from e
    else:
        doc = source
    if not isinstance(doc, dict) or "modules" not in doc:
        raise ParseError("model document must be an object with a 'modules' key")

    vocab = Vocabulary()
    modules: dict[str, ModuleInfo] = {}
    declared_ports: dict[str, set[str]] = {}
    for m in doc["modules"]:
        info = ModuleInfo(
            name=m["name"],
            kind=m.get("kind", "transport"),
            x=float(m.get("x", 0.0)),
            y=float(m.get("y", 0.0)),
            rotation=float(m.get("rotation", 0.0)),
        )
        if info.name in modules:
            raise ParseError(f"duplicate module {info.name}")
        modules[info.name] = info
        declared_ports[info.name] = set(m.get("ports", {}).get("out", []))

    connections: dict[tuple[str, str], str] = {}
    for c in doc.get("connections", []):
        src_mod, _, src_port = c["from"].partition(".")
        dst_mod = c["to"].split(".")[0]
        if src_mod not in modules or dst_mod not in modules:
            raise DanglingPort(f"connection {c['from']} -> {c['to']} references unknown module")
        if declared_ports[src_mod] and src_port not in declared_ports[src_mod]:
            raise DanglingPort(f"port {c['from']} not declared")
        key = (src_mod, src_port)
        if key in connections:
            raise DanglingPort(f"port {c['from']} connected twice")
        connections[key] = dst_mod

    resources: dict[str, ResourceKind] = {}
    for r in doc.get("resources", []):
        kind = r.get("kind", "unit")
        if kind == "unit":
            rk: ResourceKind = UnitCapacity()
        elif kind == "cyclic":
            rk = Cyclic(
                period=ms_to_ticks(r["period_ms"]),
                offset=ms_to_ticks(r.get("offset_ms", 0)),
                busy=ms_to_ticks(r["busy_ms"]),
            )
        elif kind == "multi":
            rk = MultiCapacity(k=int(r["capacity"]))
        elif kind == "state":
            rk = StateResource(labels=tuple(r.get("labels", [])))
        else:
            raise ParseError(f"unknown resource kind {kind!r}")
        resources[r["name"]] = rk

    background: set[int] = set()
    bg_canon: set[str] = set()
    predicates: set[str] = {"Loc"}
    for text in doc.get("background", []):
        neg, canon = normalize(text)
        if neg:
            raise ParseError(f"background fact may not be negated: {text}")
        bg_canon.add(canon)
        background.add(vocab.intern(canon))
        predicates.add(predicate_of(canon))

    model = MachineModel(
        name=doc.get("name", name),
        vocab=vocab,
        modules=modules,
        connections=connections,
        resources=resources,
        background=frozenset(background),
        t_delay=ms_to_ticks(doc.get("t_delay_ms", 0)),
        productivity_ppm=doc.get("productivity_ppm"),
    )
    model.allow_alloc_overrun = bool(doc.get("allow_alloc_overrun", False))
    model.predicates = predicates

    de = doc.get("delta_e")
    if de:
        engines = de["engines"]
        matrix = de["matrix"]
        for i, e1 in enumerate(engines):
            for j, e2 in enumerate(engines):
                v = float(matrix[i][j])
                if v < 0:
                    raise ParseError("delta_e entries must be >= 0")
                if i == j and v != 0:
                    raise ParseError("delta_e diagonal must be 0")
                if float(matrix[j][i]) != v:
                    raise ParseError("delta_e matrix must be symmetric")
                model.delta_e[(e1, e2)] = v

    next_id = 0
    for m in doc["modules"]:
        mod_name = m["name"]
        for cap in m.get("capabilities", []):
            for ga, warning in _ground_capability(model, mod_name, modules[mod_name].kind, cap, next_id):
                model.actions.append(ga)
                next_id += 1
                if warning:
                    model.warnings.append(warning)
    return model


def load_model(path: str | Path) -> MachineModel:
    p = Path(path)
    return compile_model(p.read_text(), name=p.stem)


def bundled_model_path(name: str) -> Path:
    return Path(__file__).parent / "models" / f"{name}.json"


def load_bundled(name: str) -> MachineModel:
    return load_model(bundled_model_path(name))


def _substitute(text: str, binding: dict[str, str]) -> str:
    out = text.replace("?sheet", SHEET)
    for var, val in binding.items():
        out = out.replace(f"?{var}", val)
    return out


def _ground_capability(model, mod_name: str, mod_kind: str, cap: dict, base_id: int):
    vocab = model.vocab
    params: dict[str, list[str]] = cap.get("params", {})
    names = list(params.keys())
    combos = itertools.product(*(params[n] for n in names)) if names else [()]

    dur = cap.get("dur_ms", [0, 0])
    if isinstance(dur, (int, float)):
        dur = [dur, dur]
    try:
        dur_lb, dur_ub = ms_to_ticks(dur[0]), ms_to_ticks(dur[1])
        setup = ms_to_ticks(cap.get("setup_ms", 0))
    except ValueError as e:
        raise NonIntegralDuration(f"{mod_name}.{cap['name']}: {e}") from e
    if dur_lb > dur_ub:
        raise ParseError(f"{mod_name}.{cap['name']}: duration lb > ub")
    cost = float(cap.get("cost", 0.0))
    if cost < 0:
        raise NegativeCost(f"{mod_name}.{cap['name']}: cost {cost}")

    allocs = []
    for al in cap.get("allocs", []):
        if al["res"] not in model.resources:
            raise DanglingPort(f"{mod_name}.{cap['name']}: unknown resource {al['res']}")
        try:
            offset = ms_to_ticks(al.get("offset_ms", 0))
            if al.get("span"):
                if offset > dur_lb:
                    raise ParseError(f"{mod_name}.{cap['name']}: span alloc offset beyond dur_lb")
                spec = AllocationSpec(
                    res=al["res"], offset=offset, dur=dur_lb - offset,
                    state_label=al.get("state"), span=True,
                )
            else:
                dur_al = ms_to_ticks(al["dur_ms"])
                if offset + dur_al > dur_ub and not model.allow_alloc_overrun:
                    raise ParseError(
                        f"{mod_name}.{cap['name']}: allocation outlives the action"
                    )
                spec = AllocationSpec(
                    res=al["res"], offset=offset, dur=dur_al, state_label=al.get("state")
                )
            allocs.append(spec)
        except ValueError as e:
            raise NonIntegralDuration(f"{mod_name}.{cap['name']}: {e}") from e

    from_loc = cap.get("from_location", mod_name)
    to_port = cap.get("to")
    if to_port is not None:
        dest = model.connections.get((mod_name, to_port))
        if dest is None:
            raise DanglingPort(f"{mod_name}.{cap['name']}: out port {to_port!r} not connected")
    else:
        dest = None  # terminal capability (finisher stacking)

    count = 0
    for combo in combos:
        binding = dict(zip(names, combo))
        pre_pos: set[int] = set()
        pre_neg: set[int] = set()
        add: set[int] = set()
        delete: set[int] = set()
        skip = False
        for text in cap.get("pre", []):
            neg, canon = normalize(_substitute(text, binding))
            model.predicates.add(predicate_of(canon))
            if SHEET not in _args_of(canon):
                # background condition: evaluated at compile time
                holds = vocab.get(canon) is not None and vocab.get(canon) in model.background
                if holds == neg:
                    skip = True
                    break
                continue
            (pre_neg if neg else pre_pos).add(vocab.intern(canon))
        if skip:
            continue
        for text in cap.get("add", []):
            neg, canon = normalize(_substitute(text, binding))
            if neg:
                raise ParseError(f"{mod_name}.{cap['name']}: negated add effect {text}")
            model.predicates.add(predicate_of(canon))
            add.add(vocab.intern(canon))
        for text in cap.get("del", []):
            neg, canon = normalize(_substitute(text, binding))
            if neg:
                raise ParseError(f"{mod_name}.{cap['name']}: negated del effect {text}")
            model.predicates.add(predicate_of(canon))
            delete.add(vocab.intern(canon))

        # modeling pattern: every author-declared effect mentioned in the
        # preconditions (silently patched, but worth a warning upstream)
        warning = None
        patched = []
        for x in add:
            if x not in pre_pos and x not in pre_neg:
                pre_neg.add(x)
                patched.append(f"!{vocab.name(x)}")
        for x in delete:
            if x not in pre_pos and x not in pre_neg:
                pre_pos.add(x)
                patched.append(vocab.name(x))
        if patched:
            warning = (
                f"{mod_name}.{cap['name']}: added missing effect preconditions "
                + ", ".join(sorted(patched))
            )

        # implicit sheet movement, pattern-complete by construction
        here = vocab.intern(f"Loc({SHEET},{from_loc})")
        pre_pos.add(here)
        delete.add(here)
        if dest is not None:
            there = vocab.intern(f"Loc({SHEET},{dest})")
            add.add(there)
            if there not in pre_pos:
                pre_neg.add(there)

        if add & delete:
            raise ParseError(f"{mod_name}.{cap['name']}: literal both added and deleted")

        suffix = "" if not binding else "[" + ",".join(binding[n] for n in names) + "]"
        is_print = mod_kind == "engine" and any(
            vocab.name(x).startswith("Printed(") for x in add
        )
        yield (
            GroundAction(
                id=base_id + count,
                name=f"{mod_name}.{cap['name']}{suffix}",
                module=mod_name,
                capability=f"{mod_name}.{cap['name']}",
                pre_pos=frozenset(pre_pos),
                pre_neg=frozenset(pre_neg),
                add=frozenset(add),
                delete=frozenset(delete),
                dur_lb=dur_lb,
                dur_ub=dur_ub,
                setup=setup,
                allocs=tuple(allocs),
                cost=cost,
                is_print=is_print,
                color=binding.get("color"),
            ),
            warning,
        )
        count += 1


def _args_of(canonical: str) -> list[str]:
    if "(" not in canonical:
        return []
    return canonical.split("(", 1)[1].rstrip(")").split(",")

"""Programmatic construction of machine-model documents.

Builds the bundled demo machines (and arbitrary variants for tests): a feeder
bank joining a highway chain with per-engine ramp/return branches, exit paths
to finishers and a purge tray, and an inverter loop back to the join for
duplex printing and holding patterns.
"""

from __future__ import annotations

import json
from pathlib import Path


def _module(name: str, kind: str, x: float, y: float, caps: list[dict], ports: list[str] | None = None) -> dict:
    m = {"name": name, "kind": kind, "x": x, "y": y, "capabilities": caps}
    if ports:
        m["ports"] = {"out": ports}
    return m


def _move(name: str, to_port: str, dur: float, res: str | None = None, **extra) -> dict:
    cap = {
        "name": name,
        "to": to_port,
        "dur_ms": [dur, dur] if isinstance(dur, (int, float)) else list(dur),
        "allocs": [{"res": res, "offset_ms": 0, "span": True}] if res else [],
    }
    cap.update(extra)
    return cap


def press_doc(
    name: str = "demo4",
    engines: int = 4,
    engine_colors: list[list[str]] | None = None,
    engine_print_ms: list[float] | None = None,
    engine_marking: list[tuple[float, float]] | None = None,
    engine_costs: dict[tuple[int, str], float] | None = None,
    finishers: int = 2,
    feeders: int = 2,
    feeder_ms: list[float] | None = None,
    feeder_costs: list[float] | None = None,
    transport_ms: float = 100,
    loop_ms: float = 300,
    delta_e: list[list[float]] | None = None,
    productivity_ppm: float = 220,
    t_delay_ms: float = 50,
    highway_stride: int = 1,
) -> dict:
    engine_colors = engine_colors or [["mono"]] * engines
    engine_print_ms = engine_print_ms or [1000] * engines
    engine_marking = engine_marking or [(300, 400)] * engines
    feeder_ms = feeder_ms or [200] * feeders
    feeder_costs = feeder_costs or [0.0] * feeders
    engine_costs = engine_costs or {}

    if engines % 2:
        raise ValueError("engine count must be even (two highway lanes)")
    per_lane = engines // 2

    modules: list[dict] = []
    connections: list[dict] = []
    resources: list[dict] = []
    background = ["Opposite(Side1,Side2)", "Opposite(Side2,Side1)"]

    def unit(name: str) -> str:
        resources.append({"name": name, "kind": "unit"})
        return name

    for i in range(feeders):
        fname = f"Feeder{i + 1}"
        unit(fname)
        modules.append(
            _module(
                fname,
                "feeder",
                0,
                i * 2,
                [
                    _move(
                        "feed",
                        "out",
                        feeder_ms[i],
                        fname,
                        from_location="Source",
                        cost=feeder_costs[i],
                    )
                ],
                ports=["out"],
            )
        )
        connections.append({"from": f"{fname}.out", "to": "Join"})

    # two parallel highway lanes with per-engine branches and crossovers
    unit("Join")
    modules.append(
        _module("Join", "transport", 1, 1, [_move("top", "top", transport_ms, "Join"), _move("bot", "bot", transport_ms, "Join")], ports=["top", "bot"])
    )
    connections.append({"from": "Join.top", "to": "T0"})
    connections.append({"from": "Join.bot", "to": "B0"})

    def lane(prefix: str, other: str, first_engine: int, y: float) -> None:
        x = 2.0
        for i in range(per_lane):
            seg = f"{prefix}{i}"
            unit(seg)
            nxt = f"{prefix}{i + 1}" if i + 1 < per_lane else "Merge"
            cross = f"{other}{i + 1}" if i + 1 < per_lane else "Merge"
            caps = [
                _move("thru", "thru", transport_ms, seg),
                _move("ramp", "ramp", transport_ms, seg),
                _move("cross", "cross", transport_ms, seg),
            ]
            for j in range(1, highway_stride):
                sub = f"{seg}x{j}"
                unit(sub)
                modules.append(_module(sub, "transport", x + 0.4 * j, y, [_move("move", "out", transport_ms, sub)], ports=["out"]))
            modules.append(_module(seg, "transport", x, y, caps, ports=["thru", "ramp", "cross"]))
            eidx = first_engine + i
            ename = f"E{eidx + 1}"
            rin, rout = f"R{eidx + 1}in", f"R{eidx + 1}out"
            unit(rin), unit(rout), unit(ename)
            # controllable-speed approach: the paper's wide duration ranges live
            # here, letting a sheet stall ahead of a busy engine
            modules.append(_module(rin, "transport", x, y - 0.5, [_move("move", "out", [transport_ms, transport_ms * 5], rin)], ports=["out"]))
            print_caps = []
            for color in engine_colors[eidx]:
                background.append(f"CanPrint({ename},{color})")
            mk_off, mk_dur = engine_marking[eidx]
            for color in engine_colors[eidx]:
                print_caps.append(
                    {
                        "name": "print",
                        "to": "out",
                        "params": {"side": ["Side1", "Side2"], "color": [color]},
                        "pre": ["SideUp(?sheet,?side)", f"CanPrint({ename},?color)", "!Printed(?sheet,?side,?color)"],
                        "add": ["Printed(?sheet,?side,?color)"],
                        "del": [],
                        "dur_ms": [engine_print_ms[eidx], engine_print_ms[eidx]],
                        "setup_ms": 50,
                        "allocs": [{"res": ename, "offset_ms": mk_off, "dur_ms": mk_dur}],
                        "cost": engine_costs.get((eidx, color), 0.0),
                    }
                )
            modules.append(_module(ename, "engine", x, y - 1, print_caps, ports=["out"]))
            modules.append(_module(rout, "transport", x + 0.6, y - 0.5, [_move("move", "out", transport_ms, rout)], ports=["out"]))
            first_sub = f"{seg}x1" if highway_stride > 1 else nxt
            connections.append({"from": f"{seg}.thru", "to": first_sub})
            for j in range(1, highway_stride):
                sub_next = f"{seg}x{j + 1}" if j + 1 < highway_stride else nxt
                connections.append({"from": f"{seg}x{j}.out", "to": sub_next})
            connections.append({"from": f"{seg}.ramp", "to": rin})
            connections.append({"from": f"{seg}.cross", "to": cross})
            connections.append({"from": f"{rin}.out", "to": ename})
            connections.append({"from": f"{ename}.out", "to": rout})
            connections.append({"from": f"{rout}.out", "to": nxt})
            x += 1.4

    lane("T", "B", 0, 2.0)
    lane("B", "T", per_lane, 0.0)

    unit("Merge")
    modules.append(_module("Merge", "transport", 2 + per_lane * 1.4, 1, [_move("move", "out", transport_ms, "Merge")], ports=["out"]))
    connections.append({"from": "Merge.out", "to": "Exit"})
    x = 3 + per_lane * 1.4

    exit_ports = [f"fin{k + 1}" for k in range(finishers)] + ["purge", "loop"]
    unit("Exit")
    modules.append(
        _module(
            "Exit",
            "transport",
            x,
            1,
            [_move(p, p, transport_ms, "Exit") for p in exit_ports],
            ports=exit_ports,
        )
    )
    for k in range(finishers):
        fin = f"Finisher{k + 1}"
        path = f"F{k + 1}path"
        unit(path), unit(fin)
        modules.append(_module(path, "transport", x + 1, k, [_move("move", "out", transport_ms, path)], ports=["out"]))
        modules.append(_module(fin, "finisher", x + 2, k, []))
        connections.append({"from": f"Exit.fin{k + 1}", "to": path})
        connections.append({"from": f"{path}.out", "to": fin})
    unit("PGpath"), unit("PurgeTray")
    modules.append(_module("PGpath", "transport", x + 1, finishers, [_move("move", "out", transport_ms, "PGpath")], ports=["out"]))
    modules.append(_module("PurgeTray", "purge", x + 2, finishers, []))
    connections.append({"from": "Exit.purge", "to": "PGpath"})
    connections.append({"from": "PGpath.out", "to": "PurgeTray"})

    unit("LoopA"), unit("Inverter"), unit("LoopB")
    modules.append(_module("LoopA", "transport", x / 2, 3, [_move("move", "out", loop_ms, "LoopA")], ports=["out"]))
    modules.append(
        _module(
            "Inverter",
            "inverter",
            x / 3,
            3,
            [
                {
                    "name": "invert",
                    "to": "out",
                    "params": {"side": ["Side1", "Side2"], "other": ["Side1", "Side2"]},
                    "pre": ["SideUp(?sheet,?side)", "Opposite(?side,?other)", "!SideUp(?sheet,?other)"],
                    "add": ["SideUp(?sheet,?other)"],
                    "del": ["SideUp(?sheet,?side)"],
                    "dur_ms": [loop_ms, loop_ms],
                    "allocs": [{"res": "Inverter", "offset_ms": 0, "span": True}],
                },
                _move("pass", "out", loop_ms, "Inverter"),
            ],
            ports=["out"],
        )
    )
    modules.append(_module("LoopB", "transport", x / 4, 3, [_move("move", "out", loop_ms, "LoopB")], ports=["out"]))
    connections.append({"from": "Exit.loop", "to": "LoopA"})
    connections.append({"from": "LoopA.out", "to": "Inverter"})
    connections.append({"from": "Inverter.out", "to": "LoopB"})
    connections.append({"from": "LoopB.out", "to": "Join"})

    doc = {
        "name": name,
        "t_delay_ms": t_delay_ms,
        "productivity_ppm": productivity_ppm,
        "background": sorted(set(background)),
        "resources": resources,
        "modules": modules,
        "connections": connections,
    }
    if delta_e:
        doc["delta_e"] = {"engines": [f"E{i + 1}" for i in range(engines)], "matrix": delta_e}
    return doc


def fig5_doc() -> dict:
    """Minimal one-engine press with an inverter loop: the out-of-order demo."""
    doc = {
        "name": "fig5",
        "t_delay_ms": 50,
        "productivity_ppm": 60,
        "background": ["CanPrint(E1,mono)", "Opposite(Side1,Side2)", "Opposite(Side2,Side1)"],
        "resources": [
            {"name": n, "kind": "unit"}
            for n in ["Feeder1", "A", "E1", "B", "Loop", "Finisher1"]
        ],
        "modules": [
            _module("Feeder1", "feeder", 0, 0, [_move("feed", "out", 100, "Feeder1", from_location="Source")], ports=["out"]),
            _module("A", "transport", 1, 0, [_move("move", "out", 100, "A")], ports=["out"]),
            _module(
                "E1",
                "engine",
                2,
                0,
                [
                    {
                        "name": "print",
                        "to": "out",
                        "params": {"side": ["Side1", "Side2"], "color": ["mono"]},
                        "pre": ["SideUp(?sheet,?side)", "CanPrint(E1,?color)", "!Printed(?sheet,?side,?color)"],
                        "add": ["Printed(?sheet,?side,?color)"],
                        "del": [],
                        "dur_ms": [1000, 1000],
                        "allocs": [{"res": "E1", "offset_ms": 300, "dur_ms": 400}],
                    }
                ],
                ports=["out"],
            ),
            _module("B", "transport", 3, 0, [_move("fin", "fin", 100, "B"), _move("loop", "loop", 100, "B")], ports=["fin", "loop"]),
            _module(
                "Loop",
                "inverter",
                2,
                1,
                [
                    {
                        "name": "invert",
                        "to": "out",
                        "params": {"side": ["Side1", "Side2"], "other": ["Side1", "Side2"]},
                        "pre": ["SideUp(?sheet,?side)", "Opposite(?side,?other)", "!SideUp(?sheet,?other)"],
                        "add": ["SideUp(?sheet,?other)"],
                        "del": ["SideUp(?sheet,?side)"],
                        "dur_ms": [600, 600],
                        "allocs": [{"res": "Loop", "offset_ms": 0, "span": True}],
                    }
                ],
                ports=["out"],
            ),
            _module("Finisher1", "finisher", 4, 0, []),
        ],
        "connections": [
            {"from": "Feeder1.out", "to": "A"},
            {"from": "A.out", "to": "E1"},
            {"from": "E1.out", "to": "B"},
            {"from": "B.fin", "to": "Finisher1"},
            {"from": "B.loop", "to": "Loop"},
            {"from": "Loop.out", "to": "A"},
        ],
    }
    return doc


def demo4_doc() -> dict:
    return press_doc(name="demo4")


def xerox4_doc() -> dict:
    """Two color + two mono engines, mixed feeder speeds, per-capability costs."""
    return press_doc(
        name="xerox4",
        engine_colors=[["color", "mono"], ["color", "mono"], ["mono"], ["mono"]],
        engine_costs={(0, "mono"): 3.0, (0, "color"): 2.0, (1, "mono"): 3.0, (1, "color"): 2.0, (2, "mono"): 1.0, (3, "mono"): 1.0},
        feeder_ms=[150, 250],
        feeder_costs=[0.5, 0.0],
        productivity_ppm=180,
    )


def quality4_doc() -> dict:
    """Four mono engines: two fast low-quality, two slow high-quality; delta-E
    pairs the similar ones."""
    return press_doc(
        name="quality4",
        engine_print_ms=[800, 800, 1400, 1400],
        engine_marking=[(250, 300), (250, 300), (400, 500), (400, 500)],
        delta_e=[
            [0.0, 2.0, 10.0, 10.0],
            [2.0, 0.0, 10.0, 10.0],
            [10.0, 10.0, 0.0, 2.0],
            [10.0, 10.0, 2.0, 0.0],
        ],
        productivity_ppm=160,
    )


def big_doc() -> dict:
    """The large demo machine: six engines, three finishers, long highways."""
    return press_doc(
        name="big",
        engines=6,
        finishers=3,
        highway_stride=2,
        productivity_ppm=240,
    )


BUNDLED = {
    "demo4": demo4_doc,
    "xerox4": xerox4_doc,
    "quality4": quality4_doc,
    "fig5": fig5_doc,
    "big": big_doc,
}


def write_bundled(directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, fn in BUNDLED.items():
        (directory / f"{name}.json").write_text(json.dumps(fn(), indent=1))


if __name__ == "__main__":
    write_bundled(Path(__file__).parent / "models")

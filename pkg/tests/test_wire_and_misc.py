import json
import socket
import threading
import time

import pytest

from sheetflow.driver import make_rig, run_scenario
from sheetflow.manager import ManagerConfig, PlanManager, Status
from sheetflow.model import compile_model, load_bundled
from sheetflow.protocol import TcpConnection, decode_lines, encode
from sheetflow.scenario import build_requests, parse_scenario
from sheetflow.sim import MachineSim


def test_wire_codec_round_trip():
    msgs = [{"type": "accept", "seq": 1, "step": 0}, {"type": "commit", "seq": 1}]
    blob = b"".join(encode(m) for m in msgs)
    decoded, rest = decode_lines(blob)
    assert decoded == msgs and rest == b""
    partial, rest = decode_lines(blob[:-4])
    assert partial == msgs[:1] and rest


def test_manager_and_sim_over_tcp(fig5):
    """One sheet end to end with the controller protocol on a real TCP socket."""
    listener = socket.create_server(("127.0.0.1", 0))
    port = listener.getsockname()[1]
    client = socket.create_connection(("127.0.0.1", port), timeout=5)
    server_side, _ = listener.accept()
    mgr_conn = TcpConnection(client)
    sim_conn = TcpConnection(server_side)

    clock_val = [0]
    manager = PlanManager(fig5, mgr_conn, clock=lambda: clock_val[0])
    sim = MachineSim(fig5, sim_conn)

    stop = threading.Event()

    def sim_pump():
        while not stop.is_set():
            for msg in sim_conn.poll():
                sim.on_message(msg)
            sim.step(clock_val[0])
            time.sleep(0.002)

    t = threading.Thread(target=sim_pump, daemon=True)
    t.start()
    try:
        for req in build_requests(parse_scenario("1sm"), fig5):
            manager.submit(req)
        record = manager.plan_next()
        assert record is not None
        clock_val[0] = 400
        released = manager.release_due()
        assert released == [1]
        assert manager.records[1].status is Status.COMMITTED
        clock_val[0] = 10_000
        deadline = time.time() + 5
        while time.time() < deadline and sim.counts["done"] < 1:
            time.sleep(0.01)
        assert sim.counts["done"] == 1
        deadline = time.time() + 5
        while time.time() < deadline:
            manager.drain_inbox()
            if manager.records[1].status is Status.DONE:
                break
            time.sleep(0.01)
        assert manager.records[1].status is Status.DONE
    finally:
        stop.set()
        t.join(timeout=2)
        for s in (client, server_side, listener):
            s.close()


CYCLIC_DOC = {
    "name": "cyclic1",
    "t_delay_ms": 0,
    "background": [],
    "resources": [
        {"name": "Feeder1", "kind": "unit"},
        {"name": "Press", "kind": "cyclic", "period_ms": 1000, "offset_ms": 500, "busy_ms": 200},
        {"name": "Out", "kind": "unit"},
    ],
    "modules": [
        {
            "name": "Feeder1",
            "kind": "feeder",
            "ports": {"out": ["out"]},
            "capabilities": [
                {"name": "feed", "to": "out", "from_location": "Source", "dur_ms": [100, 100],
                 "allocs": [{"res": "Feeder1", "offset_ms": 0, "span": True}]}
            ],
        },
        {
            "name": "Press",
            "kind": "engine",
            "ports": {"out": ["out"]},
            "capabilities": [
                {"name": "stamp", "to": "out", "dur_ms": [300, 300],
                 "pre": ["!Stamped(?sheet)"], "add": ["Stamped(?sheet)"],
                 "allocs": [{"res": "Press", "offset_ms": 0, "span": True}]}
            ],
        },
        {"name": "Fin", "kind": "finisher", "ports": {"out": []}, "capabilities": []},
    ],
    "connections": [
        {"from": "Feeder1.out", "to": "Press"},
        {"from": "Press.out", "to": "Fin"},
    ],
}


def test_cyclic_resource_respected_end_to_end():
    """Plans thread between the press's maintenance windows; the execution audit
    confirms no allocation ever overlaps a busy interval."""
    model = compile_model(CYCLIC_DOC)
    from sheetflow.requests import SheetRequest

    reqs = [
        SheetRequest(
            seq=i + 1,
            job="j",
            initial=frozenset({model.vocab.intern("Loc(S,Source)")}),
            goal=frozenset({model.vocab.intern("Stamped(S)"), model.vocab.intern("Loc(S,Fin)")}),
            unknown=frozenset(),
        )
        for i in range(4)
    ]
    sc = parse_scenario("4sm")
    res = run_scenario(model, sc, requests=reqs)
    assert res.exit_code == 0, res.diagnostics
    assert res.metrics["done"] == 4
    from sheetflow.model import Cyclic, cyclic_windows

    kind = model.resources["Press"]
    stamps = [
        (ev["t"], ev["seq"]) for ev in res.trace if ev["kind"] == "action-start" and ev["module"] == "Press"
    ]
    assert stamps
    for t, _seq in stamps:
        for bs, be in cyclic_windows(kind, t + 400):
            assert not (t < be and bs < t + 300), f"stamp at {t} inside busy window [{bs},{be})"


def test_cyclic_infeasible_horizon_retry():
    """A job too big for the seeded horizon widens it instead of failing."""
    model = compile_model(CYCLIC_DOC)
    from sheetflow.requests import SheetRequest

    reqs = [
        SheetRequest(
            seq=i + 1,
            job="j",
            initial=frozenset({model.vocab.intern("Loc(S,Source)")}),
            goal=frozenset({model.vocab.intern("Stamped(S)"), model.vocab.intern("Loc(S,Fin)")}),
            unknown=frozenset(),
        )
        for i in range(3)
    ]
    cfg = ManagerConfig(cyclic_horizon_factor=0.5)
    res = run_scenario(model, parse_scenario("3sm"), requests=reqs, config=cfg)
    assert res.exit_code == 0, res.diagnostics


def test_delta_e_matrix_swap_between_episodes(quality4):
    """A drifted matrix takes effect at the next episode, never mid-search."""
    mgr, sim, clock = make_rig(quality4, config=ManagerConfig(delta_e_max=3.0))
    from sheetflow.requests import SheetRequest

    vocab = quality4.vocab
    def req(seq):
        return SheetRequest(
            seq=seq,
            job="j",
            initial=frozenset({vocab.intern("Loc(S,Source)"), vocab.intern("SideUp(S,Side1)")}),
            goal=frozenset({vocab.intern("Printed(S,Side1,mono)")}),
            unknown=frozenset(),
        )

    mgr.submit(req(1))
    first = mgr.plan_next()
    engine = next(s.action.module for s in first.steps if s.action.is_print)
    # drift: every other engine moves out of the delta-E ball of `engine`
    far = {(a, b): (0.0 if a == b else 99.0) for a in quality4.engines() for b in quality4.engines()}
    mgr.update_delta_e(far)
    mgr.submit(req(2))
    second = mgr.plan_next()
    engine2 = next(s.action.module for s in second.steps if s.action.is_print)
    assert engine2 == engine  # chained facing-page constraint under the new matrix


def test_prediction_rarely_exceeded(demo4):
    """Across a 50-sheet run, the per-episode planning-time prediction is
    exceeded in under 5% of episodes."""
    mgr, sim, clock = make_rig(demo4)
    from sheetflow.driver import run_scenario

    predictions = []
    orig = PlanManager.plan_next

    def wrapped(self):
        if self.unplanned:
            predictions.append(self.predictor.predict())
        return orig(self)

    PlanManager.plan_next = wrapped
    try:
        res = run_scenario(demo4, parse_scenario("50sm"))
    finally:
        PlanManager.plan_next = orig
    assert res.exit_code == 0
    actuals = [p["virtual_ms"] for p in res.metrics["planning"]]
    over = sum(1 for pred, act in zip(predictions, actuals) if act > pred)
    assert over / len(actuals) < 0.05, f"{over}/{len(actuals)} episodes exceeded prediction"


def test_tick_scale_env(monkeypatch):
    monkeypatch.setenv("PRESS_TICK_US", "500")
    import importlib

    from sheetflow import ticks

    assert ticks.tick_us() == 500
    assert ticks.ms_to_ticks(10) == 20
    with pytest.raises(ValueError):
        ticks.ms_to_ticks(0.2501)
    monkeypatch.setenv("PRESS_TICK_US", "0")
    with pytest.raises(ValueError):
        ticks.tick_us()

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sheetflow.model import (
    Cyclic,
    DanglingPort,
    NegativeCost,
    NonIntegralDuration,
    ParseError,
    compile_model,
    cyclic_windows,
    load_bundled,
)
from sheetflow.requests import (
    DuplicateSeq,
    MalformedRequest,
    RequestParser,
    UnknownPredicate,
    serialize_request,
)

FIG8_DOC = {
    "name": "fig8",
    "t_delay_ms": 0,
    "background": [
        "Opposite(Side1,Side2)",
        "Opposite(Side2,Side1)",
        "CanPrint(MarkingEngine,color)",
    ],
    "resources": [{"name": "MarkingEngine", "kind": "unit"}],
    "modules": [
        {
            "name": "Printer1",
            "kind": "engine",
            "ports": {"out": ["out"]},
            "capabilities": [
                {
                    "name": "PrintSimplexAndInvert",
                    "to": "out",
                    "params": {"side": ["Side1", "Side2"], "other": ["Side1", "Side2"], "color": ["color"]},
                    "pre": [
                        "Blank(?sheet)",
                        "SideUp(?sheet,?side)",
                        "Opposite(?side,?other)",
                        "CanPrint(MarkingEngine,?color)",
                        "!HasImage(?sheet,?side,?color)",
                        "!SideUp(?sheet,?other)",
                    ],
                    "add": ["HasImage(?sheet,?side,?color)", "SideUp(?sheet,?other)"],
                    "del": ["Blank(?sheet)", "SideUp(?sheet,?side)"],
                    "dur_ms": [13200, 15000],
                    "setup_ms": 100,
                    "allocs": [{"res": "MarkingEngine", "offset_ms": 5900, "dur_ms": 3700}],
                }
            ],
        },
        {"name": "Out", "kind": "finisher", "ports": {"out": []}, "capabilities": []},
    ],
    "connections": [{"from": "Printer1.out", "to": "Out"}],
}


def test_print_and_invert_capability_numbers():
    """Duration 13.2-15.0 s, setup 0.1 s, engine held from +5.9 s for 3.7 s."""
    model = compile_model(FIG8_DOC)
    actions = [a for a in model.actions if "[Side1," in a.name]
    assert len(actions) == 1
    a = actions[0]
    assert (a.dur_lb, a.dur_ub) == (13200, 15000)
    assert a.setup == 100
    spec = a.allocs[0]
    assert (spec.res, spec.offset, spec.dur) == ("MarkingEngine", 5900, 3700)
    names = model.vocab.names(a.pre_pos)
    assert "Blank(S)" in names and "SideUp(S,Side1)" in names
    assert "Loc(S,Printer1)" in names
    adds = model.vocab.names(a.add)
    assert "HasImage(S,Side1,color)" in adds and "SideUp(S,Side2)" in adds
    dels = model.vocab.names(a.delete)
    assert "Blank(S)" in dels and "SideUp(S,Side1)" in dels and "Loc(S,Printer1)" in dels


def test_empty_model_is_valid():
    model = compile_model({"modules": []})
    assert model.actions == []


def test_compile_is_deterministic():
    m1 = compile_model(json.dumps(FIG8_DOC))
    m2 = compile_model(json.dumps(FIG8_DOC))
    assert [a.name for a in m1.actions] == [a.name for a in m2.actions]
    assert [a.id for a in m1.actions] == [a.id for a in m2.actions]


def test_background_filters_groundings():
    model = compile_model(FIG8_DOC)
    # Opposite() filters side/other combos; only 2 of 4 survive
    assert len(model.actions) == 2


def test_dangling_port_errors():
    doc = json.loads(json.dumps(FIG8_DOC))
    doc["connections"] = [{"from": "Printer1.nope", "to": "Out"}]
    with pytest.raises(DanglingPort):
        compile_model(doc)
    doc["connections"] = [{"from": "Printer1.out", "to": "Ghost"}]
    with pytest.raises(DanglingPort):
        compile_model(doc)


def test_non_integral_duration():
    doc = json.loads(json.dumps(FIG8_DOC))
    doc["modules"][0]["capabilities"][0]["dur_ms"] = [13200.0001, 15000]
    with pytest.raises(NonIntegralDuration):
        compile_model(doc)


def test_negative_cost_rejected():
    doc = json.loads(json.dumps(FIG8_DOC))
    doc["modules"][0]["capabilities"][0]["cost"] = -1
    with pytest.raises(NegativeCost):
        compile_model(doc)


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as e:
        compile_model("{not json")
    assert e.value.line >= 1


def test_effect_precondition_pattern_warns():
    doc = json.loads(json.dumps(FIG8_DOC))
    doc["modules"][0]["capabilities"][0]["pre"] = [
        "Blank(?sheet)",
        "SideUp(?sheet,?side)",
        "Opposite(?side,?other)",
        "CanPrint(MarkingEngine,?color)",
    ]
    model = compile_model(doc)
    assert model.warnings
    a = model.actions[0]
    # pattern enforced: add effects negated in preconditions
    for lit in a.add:
        assert lit in a.pre_neg or lit in a.pre_pos


def test_cyclic_windows_arithmetic():
    kind = Cyclic(period=100, offset=10, busy=5)
    assert cyclic_windows(kind, 250) == [(10, 15), (110, 115), (210, 215)]
    assert cyclic_windows(Cyclic(period=100, offset=10, busy=0), 250) == []


def test_reachable_finishers(demo4):
    assert demo4.reachable_finishers() == {"Finisher1", "Finisher2", "PurgeTray"}


def test_delta_e_validation():
    doc = json.loads(json.dumps(FIG8_DOC))
    doc["delta_e"] = {"engines": ["Printer1"], "matrix": [[1.0]]}
    with pytest.raises(ParseError):
        compile_model(doc)


# -- sheet request intake -----------------------------------------------------


def fig9_message() -> dict:
    """Sheet spec shape: blank sheet at the source, duplex images, job id 5."""
    return {
        "type": "sheet",
        "seq": 23,
        "job": "5",
        "initial": ["Loc(S,Source)", "Blank(S)", "SideUp(S,Side1)"],
        "goal": [
            "Loc(S,Out)",
            "HasImage(S,Side1,color)",
            "HasImage(S,Side2,color)",
        ],
        "unknown": [],
    }


def test_parse_request_fig9_shape():
    model = compile_model(FIG8_DOC)
    parser = RequestParser(model)
    req = parser.parse(json.dumps(fig9_message()))
    assert req.job == "5"
    images = [l for l in req.goal_names(model) if l.startswith("HasImage")]
    assert len(images) == 2


def test_empty_goal_rejected():
    model = compile_model(FIG8_DOC)
    parser = RequestParser(model)
    msg = fig9_message()
    msg["goal"] = []
    with pytest.raises(MalformedRequest):
        parser.parse(json.dumps(msg))


def test_unknown_predicate_rejected():
    model = compile_model(FIG8_DOC)
    parser = RequestParser(model)
    msg = fig9_message()
    msg["goal"] = ["Teleported(S,Out)"]
    with pytest.raises(UnknownPredicate):
        parser.parse(json.dumps(msg))


def test_duplicate_seq_rejected():
    model = compile_model(FIG8_DOC)
    parser = RequestParser(model)
    parser.parse(json.dumps(fig9_message()))
    with pytest.raises(DuplicateSeq):
        parser.parse(json.dumps(fig9_message()))


@settings(max_examples=50, deadline=None)
@given(
    seq=st.integers(1, 10**6),
    job=st.text(alphabet="abc123", min_size=1, max_size=6),
    n_goal=st.integers(1, 3),
)
def test_request_round_trip(seq, job, n_goal):
    model = compile_model(FIG8_DOC)
    pool = ["Loc(S,Out)", "HasImage(S,Side1,color)", "HasImage(S,Side2,color)", "Blank(S)"]
    msg = {
        "type": "sheet",
        "seq": seq,
        "job": job,
        "initial": ["Loc(S,Source)"],
        "goal": sorted(set(pool[:n_goal])),
        "unknown": [],
    }
    parser = RequestParser(model)
    req = parser.parse(json.dumps(msg))
    wire = serialize_request(req, model)
    req2 = RequestParser(model).parse(wire)
    assert (req2.seq, req2.job, req2.initial, req2.goal, req2.unknown) == (
        req.seq,
        req.job,
        req.initial,
        req.goal,
        req.unknown,
    )
    assert serialize_request(req2, model) == wire

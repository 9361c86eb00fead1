import itertools

import pytest

from oracles import fw_windows
from sheetflow.driver import make_rig, run_scenario
from sheetflow.ledger import Allocation
from sheetflow.manager import ManagerConfig, Status
from sheetflow.model import compile_model
from sheetflow.recovery import (
    AlreadyLost,
    ReplanProblem,
    chained_bfs,
    handle_exception,
    project,
    regoal,
    replan_budget,
)
from sheetflow.requests import SheetRequest
from sheetflow.scenario import build_requests, parse_scenario
from sheetflow.search import NoPlan, PlanSearch
from sheetflow.stn import DiffConstraint, window
from sheetflow.ticks import INF


def run(model, text, **kw):
    return run_scenario(model, parse_scenario(text), **kw)


# -- module updates ---------------------------------------------------------------


def test_module_update_shrinks_action_set(demo4):
    mgr, sim, clock = make_rig(demo4)
    before = len(mgr.episode_actions(_dummy_request(demo4))[0])
    handle_exception(mgr, {"type": "module_update", "capability": "E3.print", "state": "off"})
    after = len(mgr.episode_actions(_dummy_request(demo4))[0])
    assert after < before
    handle_exception(mgr, {"type": "module_update", "capability": "E3.print", "state": "on"})
    assert len(mgr.episode_actions(_dummy_request(demo4))[0]) == before


def _dummy_request(model, seq=1, job="j"):
    return SheetRequest(
        seq=seq,
        job=job,
        initial=frozenset({model.vocab.intern("Loc(S,Source)")}),
        goal=frozenset({model.vocab.intern("Printed(S,Side1,mono)")}),
        unknown=frozenset(),
    )


def test_unused_module_off_cancels_nothing(demo4):
    res = run(demo4, "2sm @0.1 module E4 off")
    assert res.exit_code == 0
    assert res.metrics["done"] == 2
    assert res.metrics["lost"] == 0 and res.metrics["purged"] == 0


def test_module_off_mid_plan_reroutes(demo4):
    """Disabling an engine mid-run: the sheet heading into it is lost and
    recreated, its job's later sheets keep order, everything audits green."""
    res = run(demo4, "3sm @0.7 module E1 off")
    assert res.exit_code == 0, res.diagnostics
    assert res.metrics["lost"] == 1


# -- projection --------------------------------------------------------------------


def _committed_rig(demo4):
    mgr, sim, clock = make_rig(demo4)
    for req in build_requests(parse_scenario("2sm"), demo4):
        mgr.submit(req)
    mgr.plan_next()
    mgr.plan_next()
    clock.advance(400)
    mgr.release_due()
    return mgr, sim, clock


def test_project_zero_horizon_is_current_state(demo4):
    mgr, sim, clock = _committed_rig(demo4)
    rec = mgr.records[1]
    now = clock.now
    state, boundary = project(mgr, rec, now)
    # nothing has executed yet: boundary at/after now, sheet still sourced
    assert mgr.model.vocab.intern("Loc(S,Source)") in state
    assert boundary >= now


def test_project_walks_the_timeline(demo4):
    mgr, sim, clock = _committed_rig(demo4)
    rec = mgr.records[1]
    first_end = mgr.stn.earliest(rec.steps[0].end)
    state, boundary = project(mgr, rec, first_end + 1)
    assert boundary >= first_end + 1
    loc = [mgr.model.vocab.name(l) for l in state if mgr.model.vocab.name(l).startswith("Loc(")]
    assert loc and loc[0] != "Loc(S,Source)"


def test_project_already_lost(demo4):
    mgr, sim, clock = _committed_rig(demo4)
    rec = mgr.records[1]
    engine_step = next(s for s in rec.steps if s.action.module.startswith("E"))
    mgr.disabled_capabilities.add(engine_step.action.capability)
    with pytest.raises(AlreadyLost):
        project(mgr, rec, mgr.stn.earliest(rec.t6) + 1)


def test_projection_matches_simulator(demo4):
    """The simulator's position at the boundary agrees with the projection."""
    mgr, sim, clock = _committed_rig(demo4)
    rec = mgr.records[1]
    t_probe = int(mgr.stn.earliest(rec.steps[2].end))
    state, boundary = project(mgr, rec, t_probe)
    sim.step(boundary)
    pos = sim.positions(boundary)
    loc = next(
        mgr.model.vocab.name(l)[6:-1]
        for l in state
        if mgr.model.vocab.name(l).startswith("Loc(")
    )
    if rec.seq in pos:
        module, frac = pos[rec.seq]
        assert frac == pytest.approx(0.0)
        assert module == loc


# -- regoal -----------------------------------------------------------------------


def test_regoal_purge_targets_tray(demo4):
    mgr, sim, clock = _committed_rig(demo4)
    rec = mgr.records[2]
    goal, purge, min_end = regoal(mgr, rec, "purge")
    assert purge and min_end is None
    assert mgr.model.location("PurgeTray") in goal


def test_regoal_hold_keeps_goal_and_bounds_end(demo4):
    mgr, sim, clock = _committed_rig(demo4)
    rec = mgr.records[2]
    goal, purge, min_end = regoal(mgr, rec, "hold")
    assert not purge
    assert goal == rec.request.goal
    assert min_end is not None and min_end > clock.now


def test_replan_budget_formula(demo4):
    mgr, sim, clock = make_rig(demo4)
    assert replan_budget(mgr) == max(200, 4 * mgr.predictor.predict())


# -- chained best-first search ------------------------------------------------------


BLOCKING_DOC = {
    "name": "blocking",
    "t_delay_ms": 0,
    "background": [],
    "resources": [
        {"name": n, "kind": "unit"} for n in ("LA", "LB", "M", "W", "FinA", "FinB")
    ],
    "modules": [
        {
            "name": "LA",
            "kind": "transport",
            "ports": {"out": ["fast", "slow"]},
            "capabilities": [
                {"name": "fast", "to": "fast", "dur_ms": [100, 100], "allocs": [{"res": "LA", "offset_ms": 0, "span": True}]},
                {"name": "slow", "to": "slow", "dur_ms": [100, 100], "allocs": [{"res": "LA", "offset_ms": 0, "span": True}]},
            ],
        },
        {
            "name": "LB",
            "kind": "transport",
            "ports": {"out": ["out"]},
            "capabilities": [
                {"name": "go", "to": "out", "dur_ms": [100, 100], "allocs": [{"res": "LB", "offset_ms": 0, "span": True}]}
            ],
        },
        {
            "name": "M",
            "kind": "transport",
            "ports": {"out": ["toA", "toB"]},
            "capabilities": [
                {"name": "toA", "to": "toA", "dur_ms": [100, 100], "allocs": [{"res": "M", "offset_ms": 0, "span": True}]},
                {"name": "toB", "to": "toB", "dur_ms": [100, 100], "allocs": [{"res": "M", "offset_ms": 0, "span": True}]},
            ],
        },
        {
            "name": "W",
            "kind": "transport",
            "ports": {"out": ["out"]},
            "capabilities": [
                {"name": "go", "to": "out", "dur_ms": [400, 400], "allocs": [{"res": "W", "offset_ms": 0, "span": True}]}
            ],
        },
        {"name": "FinA", "kind": "finisher", "ports": {"out": []}, "capabilities": []},
        {"name": "FinB", "kind": "finisher", "ports": {"out": []}, "capabilities": []},
    ],
    "connections": [
        {"from": "LA.fast", "to": "M"},
        {"from": "LA.slow", "to": "W"},
        {"from": "W.out", "to": "FinA"},
        {"from": "M.toA", "to": "FinA"},
        {"from": "M.toB", "to": "FinB"},
        {"from": "LB.out", "to": "M"},
    ],
}


def _blocking_problems(mgr, model):
    reqA = SheetRequest(
        seq=1,
        job="A",
        initial=frozenset({model.vocab.intern("Loc(S,LA)")}),
        goal=frozenset({model.vocab.intern("Loc(S,FinA)")}),
        unknown=frozenset(),
    )
    reqB = SheetRequest(
        seq=2,
        job="B",
        initial=frozenset({model.vocab.intern("Loc(S,LB)")}),
        goal=frozenset({model.vocab.intern("Loc(S,FinB)")}),
        unknown=frozenset(),
    )
    recA = type("R", (), {"seq": 1, "job": "A", "request": reqA})()
    recB = type("R", (), {"seq": 2, "job": "B", "request": reqB})()
    pA = ReplanProblem(record=recA, request=reqA, initial=reqA.initial, fixed_start=1000, chain_job_order=False)
    pB = ReplanProblem(record=recB, request=reqB, initial=reqB.initial, fixed_start=1000, chain_job_order=False)
    return pA, pB


def test_chained_bfs_backtracks_where_greedy_fails():
    """A's fastest route owns the shared module exactly when B needs it; only
    backtracking into A's slower route makes the pair feasible."""
    model = compile_model(BLOCKING_DOC)
    mgr, sim, clock = make_rig(model)
    pA, pB = _blocking_problems(mgr, model)

    # greedy: commit A's first (fastest) plan, then try B
    ctxA = mgr.build_context(pA.request, stn=mgr.stn, ledger=mgr.ledger, fixed_start=1000, rank_by="t6", t5=None)
    searchA = PlanSearch(pA.request, ctxA)
    firstA = next(searchA.plans())
    assert firstA.steps[0].action.name == "LA.fast"
    ctxB = mgr.build_context(pB.request, stn=firstA.stn, ledger=firstA.ledger, fixed_start=1000, rank_by="t6", t5=None)
    with pytest.raises(NoPlan):
        next(PlanSearch(pB.request, ctxB).plans())

    # chained search solves both by moving A onto the slow route
    full, prefix, _ = chained_bfs(mgr, [pA, pB], node_limit=3000)
    assert full is not None
    routes = [full[0].steps[0].action.name, full[1].steps[0].action.name]
    assert routes == ["LA.slow", "LB.go"]


def test_blocking_instance_oracle():
    """Joint enumeration confirms: fast-A excludes every B schedule."""
    model = compile_model(BLOCKING_DOC)
    vocab = model.vocab
    act = {a.name: a for a in model.actions}
    plansA = [
        [act["LA.fast"], act["M.toA"]],
        [act["LA.slow"], act["W.go"]],
    ]
    plansB = [[act["LB.go"], act["M.toB"]]]
    feasible = set()
    for ia, pa in enumerate(plansA):
        for pb in plansB:
            # schedule both rigid chains from t=1000, then order M usage
            cons = []
            n = 1
            m_ivals = []
            for plan in (pa, pb):
                prev_end = None
                for a in plan:
                    s, e = n, n + 1
                    n += 2
                    cons.append(DiffConstraint(s, e, a.dur_lb, a.dur_ub))
                    if prev_end is None:
                        cons.append(DiffConstraint(0, s, 1000, 1000))
                    else:
                        cons.append(DiffConstraint(prev_end, s, 0, 0))
                    prev_end = e
                    if any(sp.res == "M" for sp in a.allocs):
                        m_ivals.append((s, e))
            assert len(m_ivals) <= 2
            orders = [[]]
            if len(m_ivals) == 2:
                (s1, e1), (s2, e2) = m_ivals
                orders = [[DiffConstraint(e1, s2, 0, INF)], [DiffConstraint(e2, s1, 0, INF)]]
            for extra in orders:
                ok, _, _ = fw_windows(cons + extra, n)
                if ok:
                    feasible.add(ia)
    assert feasible == {1}  # only the slow route coexists with B


def test_chained_single_problem_degenerates_to_best_first():
    model = compile_model(BLOCKING_DOC)
    mgr, sim, clock = make_rig(model)
    pA, _ = _blocking_problems(mgr, model)
    full, prefix, _ = chained_bfs(mgr, [pA])
    assert full is not None and len(full) == 1
    assert full[0].steps[0].action.name == "LA.fast"


def test_chained_reports_longest_prefix():
    model = compile_model(BLOCKING_DOC)
    mgr, sim, clock = make_rig(model)
    pA, pB = _blocking_problems(mgr, model)
    # make B impossible outright: block M and W is not on B's route
    mgr.disabled_capabilities.add("M.toB")
    full, prefix, _ = chained_bfs(mgr, [pA, pB], node_limit=500)
    assert full is None
    assert len(prefix) == 1


# -- scripted jam scenario ----------------------------------------------------------


def test_scripted_jam_reroute_and_purge(demo4):
    """Jam the first sheet mid-engine: its job's in-flight followers purge,
    an unrelated job's sheet reroutes to its own finisher, content is
    recreated, and every audit stays green."""
    res = run(demo4, "4sm;7sm @1.0 jam 1")
    assert res.exit_code == 0, res.diagnostics
    mgr = res.manager
    replans = [e for e in mgr.events if e.get("kind") == "replanned"]
    solved = [s for e in replans for s in e["solved"]]
    rerouted = [s for s in solved if not mgr.records[s].purge]
    purged = [s for s in solved if mgr.records[s].purge]
    assert rerouted and purged
    # rerouted sheets belong to the unaffected job and keep its finisher
    for s in rerouted:
        assert mgr.records[s].job == "job2"
        assert mgr.records[s].finisher == mgr.jobs["job2"].finisher
    assert any(ev["kind"] == "purged" for ev in res.trace)
    # the jammed sheet's content is recreated and completes
    regen = [e for e in mgr.events if e.get("kind") == "regenerated"]
    assert regen


def test_hold_policy_saves_sheet_where_purge_discards(demo4):
    from sheetflow.search import Objective

    res_p = run(
        demo4,
        "2sm @1.0 jam 1 policy=purge",
        config=ManagerConfig(objective=Objective(), policy="purge"),
    )
    res_h = run(
        demo4,
        "2sm @1.0 jam 1 policy=hold",
        config=ManagerConfig(objective=Objective(), policy="hold"),
    )
    assert res_p.exit_code == 0 and res_h.exit_code == 0
    assert res_p.metrics["purged"] == 1
    assert res_h.metrics["purged"] == 0
    # the held sheet loops inside the machine while its predecessor reprints
    rec2 = res_h.manager.records[2]
    assert any(s.action.module in ("LoopA", "LoopB", "Inverter") for s in rec2.steps)
    # hold produces fewer recreates: only the jammed sheet reprints
    regen_h = [e for e in res_h.manager.events if e.get("kind") == "regenerated"]
    assert sum(len(e["seqs"]) for e in regen_h) == 1

import pytest
from hypothesis import given
from hypothesis import strategies as st

from corpus import solver_corpus
from oracles import optimal_soc
from tisim.graph import Instance, cycle_graph, grid_graph, path_graph
from tisim.offline import (
    BudgetExceeded,
    ConflictMode,
    Plan,
    PlanShapeError,
    Unsolvable,
    cbs_solve,
    ecbs_solve,
    format_plan,
    goals_reachable,
    makespan,
    parse_plan,
    soc,
    validate_plan,
)

SWAP, FOLLOWING = ConflictMode.SWAP, ConflictMode.FOLLOWING


def test_single_agent_plan_is_valid():
    g = path_graph(3)
    assert validate_plan(Plan([[0, 1, 2]]), g, FOLLOWING) is None


def test_swap_is_reported_at_first_step():
    g = path_graph(2)
    bad = validate_plan(Plan([[0, 1], [1, 0]]), g, SWAP)
    assert bad.kind == "swap" and bad.t == 1  # the exchange happens between t=0 and t=1


def test_following_is_allowed_only_under_swap_semantics():
    g = path_graph(3)
    plan = Plan([[1, 2], [0, 1]])  # agent 1 steps where agent 0 just was
    assert validate_plan(plan, g, SWAP) is None
    bad = validate_plan(plan, g, FOLLOWING)
    assert bad.kind == "following" and (bad.i, bad.j, bad.v) == (1, 0, 1)


def test_vertex_conflict():
    g = path_graph(3)
    bad = validate_plan(Plan([[0, 1], [2, 1]]), g, SWAP)
    assert bad.kind == "vertex" and bad.v == 1 and bad.t == 1


def test_structural_errors_are_not_conflicts():
    g = path_graph(3)
    with pytest.raises(PlanShapeError, match="not an edge"):
        validate_plan(Plan([[0, 2]]), g, SWAP)
    plan = Plan([[0, 1]])
    plan.paths.append([2])
    with pytest.raises(PlanShapeError, match="path length"):
        validate_plan(plan, g, SWAP)
    with pytest.raises(PlanShapeError, match="start -> goal"):
        validate_plan(Plan([[0, 1]]), g, SWAP, Instance(g, [0], [2]))


def test_soc_and_makespan():
    assert soc(Plan([[1], [2]])) == 0
    assert (soc(Plan([[0, 1, 2, 3]])), makespan(Plan([[0, 1, 2, 3]]))) == (3, 3)
    # goal at t=2, leaves, returns at t=5, horizon 6
    p = Plan([[0, 1, 2, 1, 1, 2, 2]])
    assert soc(p) == 5


def test_cbs_single_agent_corner_to_corner():
    g = grid_graph(3, 3)
    assert soc(cbs_solve(Instance(g, [0], [8]))) == 4


def test_cbs_c4_swap_matches_oracle_and_mode_order():
    g = cycle_graph(4)
    inst = Instance(g, [0, 2], [2, 0])
    for mode in ConflictMode:
        opt = optimal_soc(g.adjacency, inst.starts, inst.goals, mode is FOLLOWING)
        assert soc(cbs_solve(inst, mode)) == opt
    assert soc(cbs_solve(inst, FOLLOWING)) >= soc(cbs_solve(inst, SWAP))


def test_ecbs_w1_equals_cbs(bench_b):
    assert soc(ecbs_solve(bench_b, 1.0)) == soc(cbs_solve(bench_b))


def test_ecbs_rejects_w_below_one(bench_b):
    with pytest.raises(ValueError):
        ecbs_solve(bench_b, 0.9)


def test_swap_on_edge_is_unsolvable():
    with pytest.raises(Unsolvable):
        cbs_solve(Instance(path_graph(2), [0, 1], [1, 0]), SWAP)


def test_budget_exceeded(bench_a):
    with pytest.raises(BudgetExceeded):
        cbs_solve(bench_a, FOLLOWING, budget=2)


def test_reversed_cyclic_order_is_unreachable():
    # three agents on C4 can rotate but never reorder
    inst = Instance(cycle_graph(4), [0, 1, 2], [2, 1, 0])
    assert goals_reachable(inst, SWAP) is False
    with pytest.raises(Unsolvable):
        cbs_solve(inst, SWAP)
    assert goals_reachable(Instance(cycle_graph(4), [0, 1, 2], [1, 2, 3]), SWAP)


def test_reachability_matches_oracle_on_corpus():
    for inst in solver_corpus(per_size=2):
        for mode in ConflictMode:
            opt = optimal_soc(inst.graph.adjacency, inst.starts, inst.goals, mode is FOLLOWING)
            assert goals_reachable(inst, mode) is (opt is not None), inst.name


def test_start_equals_goal_gives_zero():
    g = grid_graph(3, 3)
    plan = cbs_solve(Instance(g, [0, 4], [0, 4]))
    assert soc(plan) == 0 and plan.horizon == 0


def test_solutions_are_valid_and_optimal_on_corpus():
    for inst in solver_corpus(per_size=2):
        for mode in ConflictMode:
            opt = optimal_soc(inst.graph.adjacency, inst.starts, inst.goals, mode is FOLLOWING)
            if opt is None:
                continue
            plan = cbs_solve(inst, mode)
            assert validate_plan(plan, inst.graph, mode, inst) is None, inst.name
            assert soc(plan) == opt, inst.name
            for w in (1.0, 1.1, 1.5):
                e = ecbs_solve(inst, w, mode)
                assert validate_plan(e, inst.graph, mode, inst) is None, inst.name
                assert soc(e) <= w * opt + 1e-9, inst.name


def test_unsolvable_corpus_entries_never_return_a_plan():
    for inst in solver_corpus(per_size=2):
        if optimal_soc(inst.graph.adjacency, inst.starts, inst.goals, True) is not None:
            continue
        with pytest.raises((Unsolvable, BudgetExceeded)):
            cbs_solve(inst, FOLLOWING, budget=200)


def test_plan_file_round_trip(bench_a, plans):
    plan = plans("benchmark-a")
    text = format_plan(plan)
    assert text.splitlines()[0] == f"agents 8 horizon {plan.horizon}"
    again = parse_plan(text)
    assert again.paths == plan.paths
    assert format_plan(again) == text
    cells = format_plan(plan, bench_a.graph, coords=True)
    assert parse_plan(cells, bench_a.graph).paths == plan.paths
    assert format_plan(parse_plan(cells, bench_a.graph), bench_a.graph, coords=True) == cells


def test_plan_file_errors():
    with pytest.raises(PlanShapeError, match="header"):
        parse_plan("agent 1 horizon 0\n0\n")
    with pytest.raises(PlanShapeError, match="announces 2"):
        parse_plan("agents 2 horizon 0\n0\n")
    with pytest.raises(PlanShapeError, match="horizon needs"):
        parse_plan("agents 1 horizon 2\n0 1\n")


@given(
    st.lists(st.lists(st.integers(0, 8), min_size=1, max_size=6), min_size=1, max_size=4),
    st.integers(0, 5),
)
def test_padding_is_neutral(paths, extra):
    plan = Plan(paths)
    padded = Plan([p + [p[-1]] * extra for p in plan.paths])
    assert soc(padded) == soc(plan)
    assert makespan(padded) == makespan(plan)

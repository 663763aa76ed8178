import numpy as np
import pytest

from oracles import bfs_distance
from tisim.graph import Instance, from_edges, grid_graph, path_graph, read_instance
from tisim.model import (
    CONTRACTED,
    EXTENDED,
    REQUESTING,
    HintState,
    apply_transition,
    check_config_invariants,
    detect_request_cycle,
    initial_configuration,
)
from tisim.offline import Plan
from tisim.planners import (
    PlannerKind,
    advance_hint_clock,
    causal_pibt_activate,
    compress_plan,
    greedy_activate,
    hinted_select_node,
    nearest_to_goal,
    priority_inheritance,
    release_children,
    reset,
)
from tisim.simulator import DelayModel, run_time_independent

STAR = from_edges(5, [(0, 2), (1, 2), (2, 3), (2, 4)], name="star")


def snapshot(c):
    return [(a.mode, a.head, a.tail) for a in c.agents]


def test_star_example_sequence():
    # a1 (node v1=0, goal v5=4) outranks a2 (v2=1, goal v4=3); both want v3=2
    c = initial_configuration(Instance(STAR, [0, 1], [4, 3]))
    seen = []
    for i in [0, 1, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1]:
        causal_pibt_activate(c, i)
        seen.append(snapshot(c)[i])
        if len(seen) == 3:
            # the interaction: a1 extends and a2 falls back to contracted
            assert snapshot(c)[1] == (CONTRACTED, None, 1)
    assert seen == [
        (REQUESTING, 2, 0),
        (REQUESTING, 2, 1),
        (EXTENDED, 2, 0),
        (REQUESTING, 2, 1),
        (CONTRACTED, None, 2),
        (REQUESTING, 4, 2),
        (EXTENDED, 4, 2),
        (CONTRACTED, None, 4),
        (EXTENDED, 2, 1),
        (CONTRACTED, None, 2),
        (REQUESTING, 3, 2),
        (EXTENDED, 3, 2),
        (CONTRACTED, None, 3),
    ]


def test_greedy_lone_agent_on_path():
    c = initial_configuration(Instance(path_graph(3), [0], [2]))
    for _ in range(6):
        greedy_activate(c, 0)
    assert c.agents[0].tail == 2 and c.agents[0].mode is CONTRACTED


def test_greedy_swap_blocks_forever():
    c = initial_configuration(Instance(path_graph(2), [0, 1], [1, 0]))
    for _ in range(50):
        greedy_activate(c, 0)
        greedy_activate(c, 1)
        assert all(a.mode is not EXTENDED for a in c.agents)
    assert sorted(detect_request_cycle(c)) == [0, 1]


def test_faithful_greedy_oscillates_at_goal():
    c = initial_configuration(Instance(path_graph(3), [1], [1]))
    tails = []
    for _ in range(20):
        greedy_activate(c, 0, faithful=True)
        tails.append(c.agents[0].tail)
    assert 1 in tails and set(tails) - {1}
    c = initial_configuration(Instance(path_graph(3), [1], [1]))
    for _ in range(20):
        greedy_activate(c, 0)
    assert c.agents[0].mode is CONTRACTED and c.agents[0].tail == 1


def test_nearest_to_goal_ties_go_to_smaller_id():
    g = grid_graph(3, 3)
    assert nearest_to_goal(g, {1, 3}, 4) == 1


def test_priority_inheritance_chain():
    # h (node 0) outranks m (node 1); l sits at node 2
    c = initial_configuration(Instance(path_graph(3), [0, 1, 2], [2, 0, 1]))
    h, m, _ = c.agents
    causal_pibt_activate(c, 0)
    assert h.mode is REQUESTING and h.head == 1
    priority_inheritance(c, 1)
    assert m.ptmp == h.ptmp and m.parent == 0 and 1 in h.children
    assert m.C == {2} and not (m.C & h.S)


def test_priority_inheritance_needs_higher_requester():
    c = initial_configuration(Instance(path_graph(3), [0, 1, 2], [2, 0, 1]))
    c.agents[2].ptmp = c.agents[2].pori
    apply_transition(c, 2, "request", 1)
    before = (c.agents[1].ptmp, set(c.agents[1].C), c.agents[1].parent)
    priority_inheritance(c, 1)  # agent 2 ranks below agent 1
    assert (c.agents[1].ptmp, c.agents[1].C, c.agents[1].parent) == before
    priority_inheritance(c, 0)  # nobody requests node 0
    assert c.agents[0].parent == 0


def test_backtracking_reverts_parent_and_blocks_reoccurrence():
    c = initial_configuration(Instance(path_graph(3), [0, 1, 2], [2, 0, 1]))
    a, b, d = c.agents
    causal_pibt_activate(c, 0)  # a requests 1
    causal_pibt_activate(c, 1)  # b inherits, only 2 is left, requests it
    assert b.mode is REQUESTING and b.head == 2 and b.parent == 0
    causal_pibt_activate(c, 2)  # d inherits, nothing is left, b must revert
    assert b.mode is CONTRACTED
    assert {0, 1, 2} <= b.S and 2 not in b.C
    assert check_config_invariants(c) == []
    causal_pibt_activate(c, 1)  # b is stuck too: a reverts
    assert a.mode is CONTRACTED
    assert check_config_invariants(c) == []


def test_release_children_and_reset():
    g = grid_graph(3, 3)
    c = initial_configuration(Instance(g, [4, 1, 3], [0, 2, 6]))
    a = c.agents[0]
    for j in (1, 2):
        c.agents[j].parent = 0
        c.agents[j].ptmp = a.ptmp
    a.children = {1, 2}
    assert check_config_invariants(c) == []
    release_children(c, 0)
    assert a.children == set() and c.agents[1].parent == 1 and c.agents[2].parent == 2
    assert check_config_invariants(c) == []
    reset(c, 0)
    assert len(a.C) == 5 and a.S == set() and a.ptmp == a.pori


def test_compress_plan():
    assert compress_plan([3, 3, 3]) == (3,)
    assert compress_plan([0, 1, 1, 2]) == (0, 1, 2)
    path = [0, 0, 1, 2, 2, 5, 4, 4]
    moves = sum(1 for u, v in zip(path, path[1:]) if u != v)
    assert len(compress_plan(path)) == 1 + moves


def _agent_with_hint(g, tail, goal, path, clock=0):
    c = initial_configuration(Instance(g, [tail], [goal]))
    a = c.agents[0]
    a.hint = HintState(tuple(path), clock)
    return a


def test_hinted_select_follows_plan():
    g = grid_graph(3, 3)
    a = _agent_with_hint(g, 0, 8, [0, 1, 2, 5, 8])
    assert hinted_select_node(g, a, a.C) == 1


def test_hinted_select_after_plan_is_greedy():
    g = grid_graph(3, 3)
    a = _agent_with_hint(g, 0, 8, [0, 1], clock=1)
    assert hinted_select_node(g, a, a.C) == nearest_to_goal(g, a.C, 8)


def test_hinted_select_off_plan_minimizes_distance_to_rest():
    g = grid_graph(3, 3)
    # remaining plan: (2,1) and (2,2) on the far column; agent stands at (0,0)
    a = _agent_with_hint(g, 0, 8, [4, 5, 8])
    choice = hinted_select_node(g, a, a.C)
    best = min(min(bfs_distance(g.adjacency, v, u) for u in (5, 8)) for v in a.C)
    assert min(bfs_distance(g.adjacency, choice, u) for u in (5, 8)) == best


def test_advance_hint_clock():
    g = grid_graph(3, 3)
    a = _agent_with_hint(g, 0, 2, [0, 1, 2])
    a.head = 1
    assert advance_hint_clock(a).hint.clock == 1
    a = _agent_with_hint(g, 0, 2, [0, 1, 2])
    a.head = 3
    assert advance_hint_clock(a).hint.clock == 0
    a = _agent_with_hint(g, 0, 2, [0, 1, 4, 1, 2])
    a.head = 1
    assert advance_hint_clock(a).hint.clock == 1


def test_planner_kind_names():
    assert PlannerKind("causal_pibt_plus").hinted
    assert not PlannerKind("greedy").hinted
    with pytest.raises(ValueError):
        PlannerKind("astar")


def test_hinted_with_trivial_plan_matches_plain():
    inst = read_instance("benchmark-a")
    plan = Plan([[s] for s in inst.starts])
    z = DelayModel([0.3] * inst.agent_count, 0.5)
    _, plain = run_time_independent(inst, "causal_pibt", z, np.random.default_rng(4))
    _, hinted = run_time_independent(inst, "causal_pibt_plus", z, np.random.default_rng(4), plan=plan)
    assert plain.format() == hinted.format()


def test_causal_pibt_swap_on_c4_reaches_goals():
    inst = read_instance("c4-swap")
    for seed in range(100):
        rng = np.random.default_rng(seed)
        delays = DelayModel(list(rng.uniform(0, 0.5, 2)), 0.5)
        _, trace = run_time_independent(inst, "causal_pibt", delays, rng)
        assert trace.weak_at is not None and trace.weak_at <= 200


def test_agent_resting_on_goal_from_the_start_gives_way():
    # the resting agent must not outrank the one still travelling
    inst = Instance(from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]), [0, 1], [2, 1])
    for seed in range(50):
        rng = np.random.default_rng(seed)
        metrics, _ = run_time_independent(inst, "causal_pibt", DelayModel([0.2, 0.4], 0.5), rng)
        assert metrics.success

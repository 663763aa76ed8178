"""Per-activation decision rules: Greedy, Causal-PIBT and its plan-hinted form.

Every ``*_activate`` function performs one atomic activation of agent ``i``
in place. Interactions (priority inheritance, winner determination,
backtracking into the parent) touch other agents inside the same call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .graph import Graph
from .model import (
    CONTRACTED,
    REQUESTING,
    AgentState,
    Configuration,
    apply_transition,
    update_priority,
    occupied,
)


def nearest_to_goal(graph: Graph, candidates, goal: int) -> int:
    """Candidate closest to ``goal``; ties go to the smaller node id."""
    dist = graph.distance_table(goal)
    return min(candidates, key=lambda v: (dist[v], v))


def _rank(agent: AgentState):
    return agent.ptmp, agent.pori


# -- Greedy --------------------------------------------------------------------


def greedy_activate(config: Configuration, i: int, faithful: bool = False) -> Configuration:
    """Move toward the goal one neighbor at a time, waiting on occupied heads.

    With ``faithful=False`` a contracted agent on its goal stays put; the
    literal rule keeps requesting a neighbor and never rests.
    """
    a = config.agents[i]
    if a.mode is CONTRACTED:
        nbrs = config.graph.neighbors(a.tail)
        if not nbrs or (not faithful and a.tail == a.goal):
            return config
        apply_transition(config, i, "request", nearest_to_goal(config.graph, nbrs, a.goal))
    elif a.mode is REQUESTING:
        if not occupied(config, a.head):
            apply_transition(config, i, "extend")
    else:
        apply_transition(config, i, "finish")
        reset(config, i)
    return config


# -- Causal-PIBT subprocedures --------------------------------------------------


def release_children(config: Configuration, i: int) -> Configuration:
    a = config.agents[i]
    for j in a.children:
        config.agents[j].parent = j
    a.children = set()
    return config


def reset(config: Configuration, i: int) -> Configuration:
    a = config.agents[i]
    a.S = set()
    a.C = {a.tail, *config.graph.neighbors(a.tail)}
    a.ptmp = a.pori
    return config


def priority_inheritance(config: Configuration, i: int) -> Configuration:
    """Join the tree of the strongest requester of ``tail_i`` if it outranks ``i``."""
    a = config.agents[i]
    requesters = config.requesters(a.tail)
    if not requesters:
        return config
    k = max(requesters, key=_rank)
    if k.ptmp <= a.ptmp:
        return config
    release_children(config, i)
    if a.parent != i:
        config.agents[a.parent].children.discard(i)
    a.parent = k.id
    k.children.add(i)
    a.ptmp = k.ptmp
    a.S = set(k.S)
    if a.head is not None:
        a.S.add(a.head)
    a.C = {a.tail, *config.graph.neighbors(a.tail)} - a.S
    return config


def select_node(graph: Graph, agent: AgentState) -> int:
    if agent.hint is not None:
        return hinted_select_node(graph, agent, agent.C)
    return nearest_to_goal(graph, agent.C, agent.goal)


def causal_pibt_activate(config: Configuration, i: int) -> Configuration:
    a = config.agents[i]
    agents = config.agents
    if a.mode is CONTRACTED:
        if not a.C and a.parent == i:
            release_children(config, i)
            reset(config, i)
        priority_inheritance(config, i)
        if not a.C:
            p = agents[a.parent]
            if p.head == a.tail:
                # backtrack: the parent cannot enter tail_i
                p.S |= a.S
                p.C -= p.S
                apply_transition(config, p.id, "revert")
            return config
        u = select_node(config.graph, a)
        if u == a.tail:
            release_children(config, i)
            reset(config, i)
            return config
        a.S |= {u, a.tail}
        a.C -= a.S
        apply_transition(config, i, "request", u)
    elif a.mode is REQUESTING:
        priority_inheritance(config, i)
        if a.parent != i and a.head in agents[a.parent].S:
            apply_transition(config, i, "revert")
            return config
        if occupied(config, a.head):
            return config
        rivals = config.requesters(a.head)
        winner = max(rivals, key=_rank)
        for b in rivals:
            if b is not winner:
                apply_transition(config, b.id, "revert")
        if winner is not a:
            return config
        if a.parent != i:
            agents[a.parent].children.discard(i)
        a.parent = i
        release_children(config, i)
        apply_transition(config, i, "extend")
    else:
        if a.hint is not None:
            advance_hint_clock(a)
        previous = a.tail
        apply_transition(config, i, "finish")
        update_priority(config, i, previous)
        reset(config, i)
    return config


# -- plans as hints ---------------------------------------------------------------


def compress_plan(path: Sequence[int]) -> tuple[int, ...]:
    """Drop stays: keep a node only when it differs from its predecessor."""
    if not path:
        raise ValueError("empty path")
    out = [path[0]]
    for v in path[1:]:
        if v != out[-1]:
            out.append(v)
    return tuple(out)


def hinted_select_node(graph: Graph, agent: AgentState, C) -> int:
    hint = agent.hint
    path, t = hint.path, hint.clock
    if t >= len(path) - 1:
        return nearest_to_goal(graph, C, agent.goal)
    if agent.tail == path[t] and path[t + 1] in C:
        return path[t + 1]
    rest = path[t + 1:]
    to_goal = graph.distance_table(agent.goal)

    def score(v):
        table = graph.distance_table(v)
        return min(table[u] for u in rest), to_goal[v], v

    return min(C, key=score)


def advance_hint_clock(agent: AgentState) -> AgentState:
    """Jump the clock to the first remaining plan index that equals ``head``."""
    hint = agent.hint
    rest = hint.path[hint.clock + 1:]
    if agent.head in rest:
        hint.clock += 1 + rest.index(agent.head)
    return agent


# -- planner selection ------------------------------------------------------------


PLANNERS = ("greedy", "greedy_faithful", "causal_pibt", "causal_pibt_plus")


@dataclass(frozen=True)
class PlannerKind:
    """Named activation rule; ``causal_pibt_plus`` expects hinted agents."""

    name: str

    def __post_init__(self):
        if self.name not in PLANNERS:
            raise ValueError(f"unknown planner {self.name!r}; choose from {PLANNERS}")

    @property
    def hinted(self) -> bool:
        return self.name == "causal_pibt_plus"

    @property
    def activate(self) -> Callable[[Configuration, int], Configuration]:
        if self.name == "greedy":
            return greedy_activate
        if self.name == "greedy_faithful":
            return lambda config, i: greedy_activate(config, i, faithful=True)
        return causal_pibt_activate

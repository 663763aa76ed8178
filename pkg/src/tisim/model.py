"""Asynchronous transition system for agents moving on a graph.

Each agent is contracted (resting on ``tail``), requesting (resting on
``tail`` while claiming an adjacent ``head``) or extended (moving from
``tail`` to ``head``, occupying both). A configuration is the tuple of all
agent states; one activation maps a configuration to the next.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .graph import Graph, Instance


class Mode(enum.Enum):
    CONTRACTED = "contracted"
    REQUESTING = "requesting"
    EXTENDED = "extended"

    def __str__(self) -> str:
        return self.value


CONTRACTED, REQUESTING, EXTENDED = Mode.CONTRACTED, Mode.REQUESTING, Mode.EXTENDED


class Priority(NamedTuple):
    """Lexicographic priority; larger compares as more urgent."""

    epoch: int
    tiebreak: float


class IllegalTransition(RuntimeError):
    pass


@dataclass
class HintState:
    path: tuple[int, ...]
    clock: int = 0


@dataclass
class AgentState:
    id: int
    tail: int
    goal: int
    pori: Priority
    ptmp: Priority
    C: set[int]
    S: set[int] = field(default_factory=set)
    mode: Mode = CONTRACTED
    head: int | None = None
    parent: int = -1
    children: set[int] = field(default_factory=set)
    hint: HintState | None = None

    def __post_init__(self):
        if self.parent == -1:
            self.parent = self.id

    def key(self) -> tuple:
        return (
            self.mode,
            self.tail,
            self.head,
            self.parent,
            frozenset(self.children),
            frozenset(self.C),
            frozenset(self.S),
            self.pori,
            self.ptmp,
            None if self.hint is None else self.hint.clock,
        )

    def copy(self) -> AgentState:
        hint = None if self.hint is None else HintState(self.hint.path, self.hint.clock)
        return AgentState(
            self.id, self.tail, self.goal, self.pori, self.ptmp, set(self.C), set(self.S),
            self.mode, self.head, self.parent, set(self.children), hint,
        )


@dataclass(eq=False)
class Configuration:
    graph: Graph
    agents: list[AgentState]
    # priority updates issued so far (see update_priority)
    goal_counter: int = 0

    def copy(self) -> Configuration:
        return Configuration(self.graph, [a.copy() for a in self.agents], self.goal_counter)

    def key(self) -> tuple:
        return (self.goal_counter, *(a.key() for a in self.agents))

    def __len__(self) -> int:
        return len(self.agents)

    def __getitem__(self, i: int) -> AgentState:
        return self.agents[i]

    def agent_with_tail(self, v: int) -> AgentState | None:
        for a in self.agents:
            if a.tail == v:
                return a
        return None

    def requesters(self, v: int) -> list[AgentState]:
        return [a for a in self.agents if a.mode is REQUESTING and a.head == v]


def initial_configuration(
    instance: Instance,
    tiebreaks: list[float] | None = None,
    hints: list[tuple[int, ...]] | None = None,
) -> Configuration:
    """All agents contracted at their starts with epoch-0 priorities.

    Agents that start on their goal count as arrived and begin in the goal
    band. ``tiebreaks`` must be distinct values in (0, 1); by default agent
    ``i`` gets ``(n - i) / (n + 1)`` so lower ids rank higher.
    """
    n = instance.agent_count
    if tiebreaks is None:
        tiebreaks = [(n - i) / (n + 1) for i in range(n)]
    if len(set(tiebreaks)) != n or not all(0 < t < 1 for t in tiebreaks):
        raise ValueError("tiebreaks must be n distinct values in (0, 1)")
    g = instance.graph
    agents = []
    for i, (s, t) in enumerate(zip(instance.starts, instance.goals)):
        p = Priority(GOAL_EPOCH_BASE - 1 if s == t else 0, tiebreaks[i])
        hint = None
        if hints is not None:
            hint = HintState(tuple(hints[i]))
            if not hint.path or hint.path[0] != s:
                raise ValueError(f"hint path of agent {i} does not start at its start node")
        agents.append(AgentState(i, s, t, p, p, {s, *g.neighbors(s)}, hint=hint))
    arrived = any(s == t for s, t in zip(instance.starts, instance.goals))
    return Configuration(g, agents, 1 if arrived else 0)


def occupied(config: Configuration, v: int) -> bool:
    """True when some agent rests on ``v`` or some extended agent moves into it."""
    for a in config.agents:
        if a.tail == v or (a.mode is EXTENDED and a.head == v):
            return True
    return False


def apply_transition(config: Configuration, i: int, kind: str, u: int | None = None) -> Configuration:
    """Apply one of the four legal mode changes to agent ``i`` in place."""
    a = config.agents[i]
    if kind == "request":
        if a.mode is not CONTRACTED:
            raise IllegalTransition(f"agent {i}: request from {a.mode}")
        if u is None or u not in config.graph.neighbors(a.tail):
            raise IllegalTransition(f"agent {i}: {u} is not adjacent to {a.tail}")
        a.head, a.mode = u, REQUESTING
    elif kind == "revert":
        if a.mode is not REQUESTING:
            raise IllegalTransition(f"agent {i}: revert from {a.mode}")
        a.head, a.mode = None, CONTRACTED
    elif kind == "extend":
        if a.mode is not REQUESTING:
            raise IllegalTransition(f"agent {i}: extend from {a.mode}")
        if occupied(config, a.head):
            raise IllegalTransition(f"agent {i}: head {a.head} is occupied")
        a.mode = EXTENDED
    elif kind == "finish":
        if a.mode is not EXTENDED:
            raise IllegalTransition(f"agent {i}: finish from {a.mode}")
        a.tail, a.head, a.mode = a.head, None, CONTRACTED
    else:
        raise ValueError(f"unknown transition {kind!r}")
    return config


# Epoch bands: agents that never reached their goal keep epoch 0; agents
# that left their goal sit in (GOAL_EPOCH_BASE, 0), earlier leavers higher;
# agents that arrived on their goal sit at or below GOAL_EPOCH_BASE.
GOAL_EPOCH_BASE = -(2**40)


def update_priority(config: Configuration, i: int, previous_tail: int) -> None:
    """Adjust agent ``i``'s original priority after it finished a move.

    Arriving on the goal drops it below every priority issued so far;
    leaving the goal lifts it above all goal-resting agents but below every
    agent that has never arrived.
    """
    a = config.agents[i]
    if a.tail == a.goal:
        config.goal_counter += 1
        a.pori = Priority(GOAL_EPOCH_BASE - config.goal_counter, a.pori.tiebreak)
    elif previous_tail == a.goal:
        config.goal_counter += 1
        a.pori = Priority(-config.goal_counter, a.pori.tiebreak)


def detect_request_cycle(config: Configuration) -> list[int] | None:
    """Return agent ids of some cycle of requests (head of each = tail of next)."""
    by_tail = {a.tail: a for a in config.agents}
    done: set[int] = set()
    for start in config.agents:
        if start.mode is not REQUESTING or start.id in done:
            continue
        order: list[int] = []
        pos: dict[int, int] = {}
        a = start
        while a is not None and a.mode is REQUESTING and a.id not in done:
            if a.id in pos:
                return order[pos[a.id]:]
            pos[a.id] = len(order)
            order.append(a.id)
            a = by_tail.get(a.head)
        done.update(order)
    return None


def at_goal(agent: AgentState) -> bool:
    return agent.mode is CONTRACTED and agent.tail == agent.goal


def strong_termination(config: Configuration) -> bool:
    return all(at_goal(a) for a in config.agents)


def weak_termination(flags) -> bool:
    return all(flags)


def parent_child_edges(config: Configuration) -> list[tuple[int, int]]:
    """Edges of the parent-child graph, as (tail of parent, tail of child)."""
    edges = []
    for a in config.agents:
        if a.mode is EXTENDED:
            continue
        for c in a.children:
            edges.append((a.tail, config.agents[c].tail))
    return edges


def is_forest(edges) -> bool:
    parent: dict[int, int] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru == rv:
            return False
        parent[ru] = rv
    return True


def tree_components(config: Configuration) -> list[list[int]]:
    """Agent ids grouped by connected component of the parent-child links."""
    seen: set[int] = set()
    comps = []
    for a in config.agents:
        if a.id in seen or a.mode is EXTENDED:
            continue
        comp, stack = [], [a.id]
        seen.add(a.id)
        while stack:
            j = stack.pop()
            comp.append(j)
            b = config.agents[j]
            for k in (*b.children, b.parent):
                if k not in seen and config.agents[k].mode is not EXTENDED:
                    seen.add(k)
                    stack.append(k)
        comps.append(sorted(comp))
    return comps


def check_config_invariants(config: Configuration) -> list[str]:
    """List every violated structural invariant; empty when all hold."""
    out: list[str] = []
    g = config.graph
    agents = config.agents
    tails: dict[int, int] = {}
    for a in agents:
        if a.tail in tails:
            out.append(f"duplicate tail {a.tail} (agents {tails[a.tail]}, {a.id})")
        tails[a.tail] = a.id
    heads: dict[int, int] = {}
    for a in agents:
        if (a.head is None) != (a.mode is CONTRACTED):
            out.append(f"agent {a.id}: head {a.head} inconsistent with mode {a.mode}")
        if a.head is not None and a.head not in g.neighbors(a.tail):
            out.append(f"agent {a.id}: head {a.head} not adjacent to tail {a.tail}")
        if a.mode is EXTENDED:
            if a.head in tails:
                out.append(f"agent {a.id}: extended head {a.head} is agent {tails[a.head]}'s tail")
            if a.head in heads:
                out.append(f"extended heads collide at {a.head} (agents {heads[a.head]}, {a.id})")
            heads[a.head] = a.id
        if a.ptmp < a.pori:
            out.append(f"agent {a.id}: ptmp {a.ptmp} below pori {a.pori}")
        if a.C & a.S:
            out.append(f"agent {a.id}: C and S intersect at {sorted(a.C & a.S)}")
        local = {a.tail, *g.neighbors(a.tail)}
        if not a.C <= local:
            out.append(f"agent {a.id}: C holds non-local nodes {sorted(a.C - local)}")
    if len({a.pori for a in agents}) != len(agents):
        out.append("pori not unique")
    for a in agents:
        if a.parent != a.id and not 0 <= a.parent < len(agents):
            out.append(f"agent {a.id}: parent {a.parent} out of range")
            continue
        p = agents[a.parent]
        if a.parent != a.id and a.id not in p.children:
            out.append(f"agent {a.id}: parent {p.id} does not list it as child")
        for c in a.children:
            if not 0 <= c < len(agents) or agents[c].parent != a.id:
                out.append(f"agent {a.id}: child {c} does not point back")
    if not is_forest(parent_child_edges(config)):
        out.append("H not a forest")
    else:
        for comp in tree_components(config):
            if len({agents[j].ptmp for j in comp}) > 1:
                out.append(f"tree {comp}: members disagree on ptmp")
    return out


# -- activation log ------------------------------------------------------------


def transition_kind(before: Mode, after: Mode) -> str:
    return {
        (CONTRACTED, REQUESTING): "request",
        (REQUESTING, CONTRACTED): "revert",
        (REQUESTING, EXTENDED): "extend",
        (EXTENDED, CONTRACTED): "finish",
    }.get((before, after), "stay")


def format_activation(agent: AgentState, kind: str) -> str:
    """One activation-log line: ``agent kind tail head mode`` (``_`` for a void head)."""
    head = "_" if agent.head is None else agent.head
    return f"{agent.id} {kind} {agent.tail} {head} {agent.mode}"

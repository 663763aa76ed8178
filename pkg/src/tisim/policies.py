"""Plan execution policies under move delays: FSP and MCP.

Both execute an offline plan in MAPF-DP: every timestep, each agent that
tries to move succeeds with probability ``1 - p_i`` and otherwise stays.
FSP keeps all agents on the same plan step. MCP only preserves the order in
which the plan visits every node.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .model import CONTRACTED
from .offline import ConflictMode, Plan, PlanShapeError, find_conflicts, validate_plan
from .simulator import DelayModel, ExecutionTrace, Metrics, compute_metrics


def default_bound(plan: Plan) -> int:
    return max(1, 10 * plan.horizon * plan.agent_count)


def _check(plan: Plan, delays: DelayModel, graph: Graph | None) -> None:
    if len(delays.p) != plan.agent_count:
        raise ValueError("delay model does not match the agent count")
    if graph is not None:
        bad = validate_plan(plan, graph, ConflictMode.FOLLOWING)
    else:
        found = find_conflicts(plan.paths, ConflictMode.FOLLOWING, first_only=True)
        bad = found[0] if found else None
    if bad is not None:
        raise PlanShapeError(f"plan has a {bad.kind} conflict at t={bad.t}")


class _Recorder:
    """Fills an ExecutionTrace from per-timestep agent locations."""

    def __init__(self, goals):
        self.goals = goals
        self.trace = ExecutionTrace(len(goals))
        self.trace.goal_first_visit = [None] * len(goals)

    def snap(self, locs, t: int, attempts: int) -> None:
        self.trace.record_snapshot([(CONTRACTED, v, None) for v in locs], attempts)
        first = self.trace.goal_first_visit
        for i, v in enumerate(locs):
            if first[i] is None and v == self.goals[i]:
                first[i] = t
        if self.trace.weak_at is None and all(f is not None for f in first):
            self.trace.weak_at = attempts

    def finish(self, done: bool, p_bar: float) -> tuple[Metrics, ExecutionTrace]:
        tr = self.trace
        if done:
            tr.terminated = "strong"
        elif tr.weak_at is not None:
            tr.terminated = "weak-only"
        else:
            tr.terminated = "failed"
        metrics = compute_metrics(tr, self.goals)
        metrics.p_bar = p_bar
        return metrics, tr


def fsp_run(
    plan: Plan,
    delays: DelayModel,
    rng: np.random.Generator,
    bound: int | None = None,
    graph: Graph | None = None,
) -> tuple[Metrics, ExecutionTrace]:
    """Fully synchronized execution: step ``k + 1`` starts once every agent finished step ``k``."""
    _check(plan, delays, graph)
    paths, n, T = plan.paths, plan.agent_count, plan.horizon
    bound = default_bound(plan) if bound is None else bound
    rec = _Recorder([p[-1] for p in paths])
    reached = [0] * n  # plan index each agent stands on
    step = t = attempts = 0
    rec.snap([p[0] for p in paths], 0, 0)
    while step < T and t < bound:
        t += 1
        draws = rng.random(n)
        for i in range(n):
            if reached[i] != step:
                continue
            if paths[i][step + 1] == paths[i][step]:
                reached[i] = step + 1
                continue
            attempts += 1
            if draws[i] >= delays.p[i]:
                reached[i] = step + 1
        if all(k == step + 1 for k in reached):
            step += 1
        rec.snap([paths[i][reached[i]] for i in range(n)], t, attempts)
    return rec.finish(step >= T, delays.p_bar)


@dataclass
class DependencyTable:
    """Per-node visit queues of (agent, plan timestep), stays collapsed."""

    queues: dict[int, deque]
    visits: list[list[tuple[int, int]]]  # per agent: (node, first plan timestep)

    def copy(self) -> DependencyTable:
        return DependencyTable({v: deque(q) for v, q in self.queues.items()}, self.visits)


def mcp_build(plan: Plan, graph: Graph | None = None) -> DependencyTable:
    found = find_conflicts(plan.paths, ConflictMode.FOLLOWING, first_only=True)
    if found:
        raise PlanShapeError(f"plan has a {found[0].kind} conflict at t={found[0].t}")
    if graph is not None:
        validate_plan(plan, graph, ConflictMode.FOLLOWING)
    visits = []
    events = []
    for i, path in enumerate(plan.paths):
        seq = []
        for t, v in enumerate(path):
            if not seq or seq[-1][0] != v:
                seq.append((v, t))
                events.append((v, t, i))
        visits.append(seq)
    queues: dict[int, deque] = {}
    for v, t, i in sorted(events):
        queues.setdefault(v, deque()).append((i, t))
    return DependencyTable(queues, visits)


def mcp_run(
    plan: Plan,
    delays: DelayModel,
    rng: np.random.Generator,
    bound: int | None = None,
    graph: Graph | None = None,
) -> tuple[Metrics, ExecutionTrace]:
    """Execute ``plan`` keeping each node's visit order; agents skip plan waits.

    An agent tries its next move once it is at the front of the target
    node's queue, i.e. every earlier visitor has completed its move away.
    """
    _check(plan, delays, graph)
    table = mcp_build(plan).copy()
    queues, visits = table.queues, table.visits
    n = plan.agent_count
    bound = default_bound(plan) if bound is None else bound
    rec = _Recorder([p[-1] for p in plan.paths])
    pos = [0] * n
    t = attempts = 0

    def done():
        return all(pos[i] == len(visits[i]) - 1 for i in range(n))

    rec.snap([visits[i][0][0] for i in range(n)], 0, 0)
    while not done() and t < bound:
        t += 1
        draws = rng.random(n)
        movers = []
        for i in range(n):
            k = pos[i] + 1
            if k == len(visits[i]):
                continue
            v, when = visits[i][k]
            if queues[v][0] != (i, when):
                continue
            attempts += 1
            if draws[i] >= delays.p[i]:
                movers.append(i)
        for i in movers:
            queues[visits[i][pos[i]][0]].popleft()
            pos[i] += 1
        rec.snap([visits[i][pos[i]][0] for i in range(n)], t, attempts)
    return rec.finish(done(), delays.p_bar)


POLICIES = {"fsp": fsp_run, "mcp": mcp_run}

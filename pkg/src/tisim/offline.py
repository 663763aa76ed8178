"""Offline MAPF: plans, conflict checking, CBS and ECBS.

Two conflict semantics are supported. ``SWAP`` forbids vertex and swap
conflicts (classic MAPF). ``FOLLOWING`` forbids vertex conflicts and any
move onto a node another agent occupied one step earlier, which is what
execution under move delays needs.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass, field

from .graph import Graph, Instance


class ConflictMode(enum.Enum):
    SWAP = "swap"
    FOLLOWING = "following"

    def __str__(self) -> str:
        return self.value


class PlanShapeError(ValueError):
    """Plan does not fit its instance (lengths, endpoints, non-edges)."""


class Unsolvable(RuntimeError):
    pass


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class Plan:
    """Per-agent paths padded to a common horizon with goal stays."""

    paths: list[list[int]]
    mode: ConflictMode | None = None

    def __post_init__(self):
        self.paths = pad_paths(self.paths)

    @property
    def horizon(self) -> int:
        return len(self.paths[0]) - 1 if self.paths else 0

    @property
    def agent_count(self) -> int:
        return len(self.paths)


def pad_paths(paths) -> list[list[int]]:
    T = max((len(p) for p in paths), default=1)
    return [list(p) + [p[-1]] * (T - len(p)) for p in paths]


def trim_path(path) -> list[int]:
    """Drop trailing repeats of the final node."""
    k = len(path)
    while k > 1 and path[k - 2] == path[-1]:
        k -= 1
    return list(path[:k])


def path_cost(path) -> int:
    return len(trim_path(path)) - 1


def soc(plan: Plan) -> int:
    """Sum over agents of the earliest time after which they rest on their goal."""
    return sum(path_cost(p) for p in plan.paths)


def makespan(plan: Plan) -> int:
    return max((path_cost(p) for p in plan.paths), default=0)


# -- conflicts -------------------------------------------------------------------


@dataclass(frozen=True)
class Conflict:
    """``i`` conflicts with ``j`` when arriving at (or being at) ``v`` at time ``t``.

    For swap conflicts ``u`` is the node ``i`` came from; for following
    conflicts ``j`` occupied ``v`` at ``t - 1``.
    """

    kind: str
    i: int
    j: int
    t: int
    v: int
    u: int | None = None


def _at(path, t):
    return path[t] if t < len(path) else path[-1]


def find_conflicts(paths, mode: ConflictMode, first_only: bool = False) -> list[Conflict]:
    """Conflicts ordered by time; paths may have different lengths."""
    T = max(len(p) for p in paths)
    out: list[Conflict] = []
    prev: dict[int, int] | None = None
    for t in range(T):
        here: dict[int, int] = {}
        for i, p in enumerate(paths):
            v = _at(p, t)
            if v in here:
                out.append(Conflict("vertex", here[v], i, t, v))
                if first_only:
                    return out
            else:
                here[v] = i
        if prev is not None:
            for i, p in enumerate(paths):
                u, v = _at(p, t - 1), _at(p, t)
                if u == v:
                    continue
                j = prev.get(v)
                if j is None or j == i:
                    continue
                if mode is ConflictMode.FOLLOWING:
                    out.append(Conflict("following", i, j, t, v))
                elif _at(paths[j], t) == u:
                    if i < j:
                        out.append(Conflict("swap", i, j, t, v, u))
                else:
                    continue
                if first_only:
                    return out
        prev = here
    return out


def validate_plan(plan: Plan, graph: Graph, mode: ConflictMode, instance: Instance | None = None) -> Conflict | None:
    """Return the first conflict of ``plan`` under ``mode``, or ``None`` when valid.

    Structural problems (ragged paths, non-edges, wrong endpoints) raise
    :class:`PlanShapeError` instead.
    """
    paths = plan.paths
    if not paths:
        return None
    T = len(paths[0])
    for i, p in enumerate(paths):
        if len(p) != T:
            raise PlanShapeError(f"agent {i}: path length {len(p)} != {T}")
        for t in range(T):
            if not 0 <= p[t] < graph.node_count:
                raise PlanShapeError(f"agent {i}: node {p[t]} out of range at t={t}")
            if t and p[t] != p[t - 1] and p[t] not in graph.neighbors(p[t - 1]):
                raise PlanShapeError(f"agent {i}: {p[t - 1]}->{p[t]} at t={t} is not an edge")
    if instance is not None:
        if len(paths) != instance.agent_count:
            raise PlanShapeError(f"{len(paths)} paths for {instance.agent_count} agents")
        for i, p in enumerate(paths):
            if p[0] != instance.starts[i] or p[-1] != instance.goals[i]:
                raise PlanShapeError(f"agent {i}: path does not run start -> goal")
    found = find_conflicts(paths, mode, first_only=True)
    return found[0] if found else None


# -- low level: focal space-time search ---------------------------------------------


@dataclass(frozen=True)
class Constraints:
    vertex: frozenset = frozenset()  # (v, t)
    edge: frozenset = frozenset()  # (u, v, t): moving u->v arriving at t

    def add(self, c) -> Constraints:
        if len(c) == 2:
            return Constraints(self.vertex | {c}, self.edge)
        return Constraints(self.vertex, self.edge | {c})


class _Occupancy:
    """Positions of the other agents, for counting conflicts of a move."""

    def __init__(self, paths, skip: int):
        self.at: dict[tuple[int, int], int] = {}
        self.rest: dict[int, int] = {}
        for j, p in enumerate(paths):
            if j == skip or p is None:
                continue
            for t, v in enumerate(p):
                self.at[(v, t)] = self.at.get((v, t), 0) + 1
            last = len(p) - 1
            self.rest[p[-1]] = min(self.rest.get(p[-1], last), last)

    def count(self, v: int, t: int) -> int:
        n = self.at.get((v, t), 0)
        r = self.rest.get(v)
        if r is not None and t > r:
            n += 1
        return n

    def cost(self, u: int, v: int, t: int, mode: ConflictMode) -> int:
        c = self.count(v, t)
        if u != v:
            c += self.count(v, t - 1)
            if mode is ConflictMode.FOLLOWING:
                c += self.count(u, t)
        return c


def low_level(
    graph: Graph,
    start: int,
    goal: int,
    cons: Constraints,
    horizon: int,
    w: float = 1.0,
    occupancy: _Occupancy | None = None,
    mode: ConflictMode = ConflictMode.SWAP,
) -> tuple[list[int], int] | None:
    """Focal search over (node, time); returns (path, lower bound on cost).

    With ``w == 1`` it is A* with ties broken toward fewer conflicts
    against ``occupancy``, so the path is shortest under ``cons``.
    """
    dist = graph.distance_table(goal)
    if dist[start] > horizon:
        return None
    goal_free = 1 + max((t for v, t in cons.vertex if v == goal), default=-1)

    def h(v, t):
        return max(dist[v], goal_free - t)

    tick = itertools.count()
    nodes: dict[int, tuple] = {}  # id -> (v, t, conflicts, parent id)
    buckets: dict[int, list[int]] = {}
    fheap: list[int] = []
    focal: list[tuple] = []
    closed: set[tuple[int, int]] = set()
    bound = [0]

    def push(v, t, conf, parent):
        f = t + h(v, t)
        k = next(tick)
        nodes[k] = (v, t, conf, parent)
        if f not in buckets:
            buckets[f] = []
            heapq.heappush(fheap, f)
        buckets[f].append(k)
        if f <= bound[0]:
            heapq.heappush(focal, (conf, f, -t, k))

    def f_min():
        while fheap:
            f = fheap[0]
            live = [k for k in buckets[f] if (nodes[k][0], nodes[k][1]) not in closed]
            if live:
                buckets[f] = live
                return f
            heapq.heappop(fheap)
            del buckets[f]
        return None

    if (start, 0) in cons.vertex:
        return None
    push(start, 0, 0, None)
    fmin = f_min()
    bound[0] = int(fmin * w + 1e-9)
    heapq.heappush(focal, (0, fmin, 0, 0))
    while True:
        fmin = f_min()
        if fmin is None:
            return None
        new_bound = int(fmin * w + 1e-9)
        if new_bound > bound[0]:
            for f in sorted(buckets):
                if bound[0] < f <= new_bound:
                    for k in buckets[f]:
                        v, t, conf, _ = nodes[k]
                        heapq.heappush(focal, (conf, f, -t, k))
            bound[0] = new_bound
        while focal:
            conf, f, _, k = heapq.heappop(focal)
            v, t, _, _ = nodes[k]
            if (v, t) not in closed and f <= bound[0]:
                break
        else:
            # focal drained by stale entries; refill from the f_min bucket
            for k in buckets[fmin]:
                v, t, conf, _ = nodes[k]
                heapq.heappush(focal, (conf, fmin, -t, k))
            continue
        closed.add((v, t))
        if v == goal and t >= goal_free:
            path = []
            while k is not None:
                path.append(nodes[k][0])
                k = nodes[k][3]
            return path[::-1], fmin
        if t >= horizon:
            continue
        nt = t + 1
        for u in (v, *graph.neighbors(v)):
            if (u, nt) in closed or (u, nt) in cons.vertex or (v, u, nt) in cons.edge:
                continue
            if dist[u] + t > horizon + 1:
                continue
            extra = occupancy.cost(v, u, nt, mode) if occupancy is not None else 0
            push(u, nt, conf + extra, k)


# -- high level -----------------------------------------------------------------------


@dataclass(order=True)
class _HLNode:
    sort_key: tuple
    constraints: list[Constraints] = field(compare=False)
    paths: list[list[int]] = field(compare=False)
    lbs: list[int] = field(compare=False)
    conflicts: list[Conflict] = field(compare=False)
    closed: bool = field(default=False, compare=False)
    in_focal: bool = field(default=False, compare=False)

    @property
    def cost(self) -> int:
        return sum(len(p) - 1 for p in self.paths)

    @property
    def lb(self) -> int:
        return sum(self.lbs)


def _conflicting_pairs(conflicts) -> int:
    return len({(min(c.i, c.j), max(c.i, c.j)) for c in conflicts})


def _branch(c: Conflict) -> list[tuple[int, tuple]]:
    if c.kind == "vertex":
        return [(c.i, (c.v, c.t)), (c.j, (c.v, c.t))]
    if c.kind == "swap":
        return [(c.i, (c.u, c.v, c.t)), (c.j, (c.v, c.u, c.t))]
    # following: i entered v at t while j was on v at t - 1
    return [(c.i, (c.v, c.t)), (c.j, (c.v, c.t - 1))]


def default_horizon(instance: Instance) -> int:
    g = instance.graph
    return g.node_count + sum(g.distance(s, t) for s, t in zip(instance.starts, instance.goals))


def horizon_limit(instance: Instance) -> int:
    """Makespan bound for some optimal plan: the number of (locations, finished) joint states.

    A cheapest plan never repeats such a state, otherwise cutting the loop
    would lower its cost.
    """
    n = instance.agent_count
    return (instance.graph.node_count * 2) ** n


REACHABILITY_STATES = 200_000


def _joint_moves(graph: Graph, locs: tuple, mode: ConflictMode):
    """Yield every conflict-free joint successor of ``locs``."""
    before = set(locs)
    n = len(locs)
    out = [0] * n

    def rec(i, used):
        if i == n:
            yield tuple(out)
            return
        u = locs[i]
        for v in (u, *graph.neighbors(u)):
            if v in used:
                continue
            if v != u and v in before:
                if mode is ConflictMode.FOLLOWING:
                    continue
                j = locs.index(v)
                if j < i and out[j] == u:
                    continue
            out[i] = v
            used.add(v)
            yield from rec(i + 1, used)
            used.discard(v)

    yield from rec(0, set())


def goals_reachable(instance: Instance, mode: ConflictMode) -> bool | None:
    """Breadth-first reachability of the goal configuration.

    Returns None when the joint state space is too large to enumerate.
    """
    g = instance.graph
    if g.node_count ** instance.agent_count > REACHABILITY_STATES:
        return None
    start, goal = tuple(instance.starts), tuple(instance.goals)
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for locs in frontier:
            if locs == goal:
                return True
            for succ in _joint_moves(g, locs, mode):
                if succ not in seen:
                    seen.add(succ)
                    nxt.append(succ)
        frontier = nxt
    return False


def _solve(instance: Instance, mode: ConflictMode, w: float, budget: int, horizon: int | None) -> Plan:
    """Search with a growing horizon unless one is given.

    Every plan longer than ``H`` costs at least ``H + 1``, so a plan of cost
    at most ``w * (H + 1)`` found within horizon ``H`` is within ``w`` of
    the unrestricted optimum.
    """
    instance.validate()
    if goals_reachable(instance, mode) is False:
        raise Unsolvable("goal configuration is unreachable")
    if horizon is not None:
        return _search(instance, mode, w, budget, horizon)
    H = default_horizon(instance)
    limit = max(H, horizon_limit(instance))
    while True:
        try:
            plan = _search(instance, mode, w, budget, H)
        except Unsolvable:
            if H >= limit:
                raise
            H = min(2 * H, limit)
            continue
        cost = soc(plan)
        if cost <= w * (H + 1) + 1e-9 or H >= limit:
            return plan
        H = min(max(H + 1, math.ceil(cost / w)), limit)


def _search(instance: Instance, mode: ConflictMode, w: float, budget: int, horizon: int) -> Plan:
    g = instance.graph
    n = instance.agent_count
    cons = [Constraints() for _ in range(n)]
    paths: list[list[int] | None] = [None] * n
    lbs = [0] * n
    for i in range(n):
        occ = _Occupancy(paths, i)
        res = low_level(g, instance.starts[i], instance.goals[i], cons[i], horizon, w, occ, mode)
        if res is None:
            raise Unsolvable(f"agent {i} cannot reach its goal")
        paths[i], lbs[i] = res
    tick = itertools.count()

    def make(constraints, paths, lbs):
        conflicts = find_conflicts(paths, mode)
        node = _HLNode((), constraints, paths, lbs, conflicts)
        node.sort_key = (_conflicting_pairs(conflicts), node.cost, next(tick))
        return node

    root = make(cons, paths, lbs)
    root.in_focal = True
    open_heap: list[tuple[int, int, _HLNode]] = [(root.lb, next(tick), root)]
    focal: list[_HLNode] = [root]
    expanded = 0
    lb_bound = root.lb * w

    while open_heap:
        while open_heap and open_heap[0][2].closed:
            heapq.heappop(open_heap)
        if not open_heap:
            break
        lb_min = open_heap[0][0]
        if lb_min * w > lb_bound:
            lb_bound = lb_min * w
            for _, _, node in open_heap:
                if not node.closed and not node.in_focal and node.cost <= lb_bound + 1e-9:
                    heapq.heappush(focal, node)
                    node.in_focal = True
        node = None
        while focal:
            cand = heapq.heappop(focal)
            cand.in_focal = False
            if not cand.closed:
                node = cand
                break
        if node is None:
            # every focal entry went stale; take the best lower bound
            node = open_heap[0][2]
        node.closed = True
        if not node.conflicts:
            return Plan([list(p) for p in node.paths], mode)
        expanded += 1
        if expanded > budget:
            raise BudgetExceeded(f"no solution within {budget} high-level expansions")
        for agent, c in _branch(node.conflicts[0]):
            new_cons = list(node.constraints)
            new_cons[agent] = new_cons[agent].add(c)
            if new_cons[agent] == node.constraints[agent]:
                continue
            new_paths = list(node.paths)
            new_paths[agent] = None
            occ = _Occupancy(new_paths, agent)
            res = low_level(g, instance.starts[agent], instance.goals[agent], new_cons[agent], horizon, w, occ, mode)
            if res is None:
                continue
            new_lbs = list(node.lbs)
            new_paths[agent] = res[0]
            # adding a constraint cannot lower the agent's optimum
            new_lbs[agent] = max(res[1], node.lbs[agent])
            child = make(new_cons, new_paths, new_lbs)
            heapq.heappush(open_heap, (child.lb, next(tick), child))
            if child.cost <= lb_bound + 1e-9:
                heapq.heappush(focal, child)
                child.in_focal = True
    raise Unsolvable("constraint tree exhausted")


def cbs_solve(
    instance: Instance,
    mode: ConflictMode = ConflictMode.FOLLOWING,
    budget: int = 100_000,
    horizon: int | None = None,
) -> Plan:
    """SOC-optimal plan by conflict-based search."""
    return _solve(instance, mode, 1.0, budget, horizon)


def ecbs_solve(
    instance: Instance,
    w: float = 1.1,
    mode: ConflictMode = ConflictMode.FOLLOWING,
    budget: int = 100_000,
    horizon: int | None = None,
) -> Plan:
    """Plan whose SOC is at most ``w`` times the optimum (focal search at both levels)."""
    if w < 1:
        raise ValueError("suboptimality factor must be >= 1")
    return _solve(instance, mode, w, budget, horizon)


# -- plan files -------------------------------------------------------------------------


def format_plan(plan: Plan, graph: Graph | None = None, coords: bool = False) -> str:
    """``agents <n> horizon <T>`` then one line of nodes (or ``x,y`` cells) per agent."""
    lines = [f"agents {plan.agent_count} horizon {plan.horizon}"]
    for p in plan.paths:
        if coords:
            if graph is None or graph.node_coords is None:
                raise ValueError("cell output needs a grid graph")
            lines.append(" ".join(f"{graph.node_coords[v][0]},{graph.node_coords[v][1]}" for v in p))
        else:
            lines.append(" ".join(str(v) for v in p))
    return "\n".join(lines) + "\n"


def parse_plan(text: str, graph: Graph | None = None) -> Plan:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise PlanShapeError("empty plan file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "agents" or head[2] != "horizon":
        raise PlanShapeError(f"line 1: bad header {lines[0]!r}")
    n, T = int(head[1]), int(head[3])
    if len(lines) - 1 != n:
        raise PlanShapeError(f"header announces {n} agents, found {len(lines) - 1} paths")
    paths = []
    for lineno, line in enumerate(lines[1:], start=2):
        path = []
        for tok in line.split():
            if "," in tok:
                if graph is None:
                    raise PlanShapeError(f"line {lineno}: cell coordinates need a graph")
                x, y = (int(c) for c in tok.split(","))
                v = graph.node_at(x, y)
                if v is None:
                    raise PlanShapeError(f"line {lineno}: cell {tok} is blocked")
                path.append(v)
            else:
                path.append(int(tok))
        if len(path) != T + 1:
            raise PlanShapeError(f"line {lineno}: {len(path)} nodes, horizon needs {T + 1}")
        paths.append(path)
    return Plan(paths)

"""MAPF-DP execution engine for time-independent planners.

One timestep is a stabilization sweep over contracted/requesting agents
followed by a move phase in which every extended agent completes its move
with probability ``1 - p_i``. (Starting the loop with the sweep rather than
the move phase is the same activation stream: at t=0 nobody is extended.)
Snapshots are taken after the move phase, so an agent's ``tail`` in
snapshot ``t`` is its location at time ``t``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graph import Instance
from .model import (
    EXTENDED,
    GOAL_EPOCH_BASE,
    REQUESTING,
    Configuration,
    Mode,
    Priority,
    at_goal,
    check_config_invariants,
    detect_request_cycle,
    format_activation,
    initial_configuration,
    strong_termination,
    transition_kind,
)
from .planners import PlannerKind, compress_plan

log = logging.getLogger(__name__)

DEFAULT_ACTIVATION_BOUND = 10_000


class LivelockError(RuntimeError):
    """Phase-2 stabilization exceeded its per-timestep activation cap."""


class InvariantViolation(AssertionError):
    pass


@dataclass
class DelayModel:
    p: list[float]
    p_bar: float

    def __post_init__(self):
        if not 0.0 <= self.p_bar <= 1.0:
            raise ValueError(f"p_bar={self.p_bar} outside [0, 1]")
        if any(not 0.0 <= q <= self.p_bar for q in self.p):
            raise ValueError("every p_i must lie in [0, p_bar]")


def sample_delays(n: int, p_bar: float, rng: np.random.Generator) -> DelayModel:
    """Independent per-agent failure probabilities, uniform on [0, p_bar]."""
    if not 0.0 <= p_bar <= 1.0:
        raise ValueError(f"p_bar={p_bar} outside [0, 1]")
    return DelayModel([float(q) for q in rng.uniform(0.0, p_bar, size=n)], p_bar)


@dataclass
class ExecutionTrace:
    n: int
    timesteps: list[list[tuple[Mode, int, int | None]]] = field(default_factory=list)
    activations: list[int] = field(default_factory=list)
    goal_first_visit: list[int | None] = field(default_factory=list)
    terminated: str = "failed"  # strong | weak-only | failed
    # activation count at which every agent had visited its goal
    weak_at: int | None = None
    activation_log: list[str] | None = None

    @property
    def activations_total(self) -> int:
        return self.activations[-1] if self.activations else 0

    def record(self, config: Configuration, activations: int) -> None:
        self.record_snapshot([(a.mode, a.tail, a.head) for a in config.agents], activations)

    def record_snapshot(self, snapshot, activations: int) -> None:
        self.timesteps.append(list(snapshot))
        self.activations.append(activations)

    def locations(self, t: int) -> list[int]:
        return [tail for _, tail, _ in self.timesteps[t]]

    def format(self) -> str:
        lines = [f"timesteps {len(self.timesteps) - 1} agents {self.n}"]
        for t, snap in enumerate(self.timesteps):
            for i, (mode, tail, head) in enumerate(snap):
                lines.append(f"{t} {i} {mode} {tail} {'_' if head is None else head}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> ExecutionTrace:
        lines = text.splitlines()
        _, T, _, n = lines[0].split()
        trace = cls(int(n))
        trace.timesteps = [[None] * trace.n for _ in range(int(T) + 1)]
        for line in lines[1:]:
            t, i, mode, tail, head = line.split()
            trace.timesteps[int(t)][int(i)] = (
                Mode(mode), int(tail), None if head == "_" else int(head),
            )
        return trace


@dataclass
class Metrics:
    soc: int | None
    makespan: int | None
    activations: int
    success: bool
    seed: int | None = None
    p_bar: float | None = None


def trace_conflicts(trace: ExecutionTrace) -> list[str]:
    """Vertex and following conflicts between consecutive snapshots."""
    out = []
    prev = None
    for t in range(len(trace.timesteps)):
        locs = trace.locations(t)
        if len(set(locs)) != len(locs):
            out.append(f"t={t}: two agents share a node")
        if prev is not None:
            held = {v: j for j, v in enumerate(prev)}
            for i, v in enumerate(locs):
                j = held.get(v)
                if v != prev[i] and j is not None and j != i:
                    out.append(f"t={t}: agent {i} entered {v} held by agent {j} at t={t - 1}")
        prev = locs
    return out


def agent_costs(trace: ExecutionTrace, goals) -> list[int | None]:
    """Earliest snapshot index from which each agent stays on its goal."""
    costs: list[int | None] = []
    T = len(trace.timesteps) - 1
    for i, g in enumerate(goals):
        cost = None
        for t in range(T, -1, -1):
            if trace.timesteps[t][i][1] != g:
                break
            cost = t
        costs.append(cost)
    return costs


def compute_metrics(trace: ExecutionTrace, goals) -> Metrics:
    success = trace.terminated == "strong"
    costs = agent_costs(trace, goals)
    if success and all(c is not None for c in costs):
        soc, makespan = sum(costs), max(costs, default=0)
    else:
        soc = makespan = None
    return Metrics(soc, makespan, trace.activations_total, success)


# -- phase 2 ------------------------------------------------------------------


def _touched(config: Configuration, i: int) -> set[int]:
    """Agents an activation of ``i`` may modify."""
    a = config.agents[i]
    ids = {i, a.parent, *a.children}
    for b in config.agents:
        if b.mode is REQUESTING and (b.head == a.tail or (a.head is not None and b.head == a.head)):
            ids.add(b.id)
    return ids


def activate(config: Configuration, planner: PlannerKind, i: int, log_lines: list[str] | None = None) -> bool:
    """Activate agent ``i``; return whether the configuration changed."""
    ids = _touched(config, i)
    agents = config.agents
    before = [agents[j].key() for j in ids]
    counter = config.goal_counter
    mode = agents[i].mode
    planner.activate(config, i)
    changed = counter != config.goal_counter or before != [agents[j].key() for j in ids]
    if log_lines is not None:
        log_lines.append(format_activation(agents[i], transition_kind(mode, agents[i].mode)))
    return changed


def phase2_until_stable(
    config: Configuration,
    planner: PlannerKind,
    rng: np.random.Generator,
    cap: int | None = None,
    observer=None,
    log_lines: list[str] | None = None,
) -> tuple[Configuration, int]:
    """Activate non-extended agents in random sweeps until a sweep changes nothing.

    Returns the configuration and the number of activations spent, including
    the final confirming sweep. ``observer(i)`` is called after every
    activation.
    """
    n = len(config.agents)
    if cap is None:
        cap = 50 * n * max(config.graph.max_degree, 1)
    agents = config.agents
    count = 0
    while True:
        idle = [a.id for a in agents if a.mode is not EXTENDED]
        if not idle:
            return config, count
        changed = False
        for i in rng.permutation(idle):
            i = int(i)
            if agents[i].mode is EXTENDED:
                continue
            if activate(config, planner, i, log_lines):
                changed = True
            count += 1
            if observer is not None:
                observer(i)
            if count > cap:
                raise LivelockError(f"no stable configuration after {count} activations")
        if not changed:
            return config, count


# -- full run -----------------------------------------------------------------


def run_time_independent(
    instance: Instance,
    planner: PlannerKind | str,
    delays: DelayModel,
    rng: np.random.Generator,
    activation_bound: int = DEFAULT_ACTIVATION_BOUND,
    plan=None,
    check_invariants: bool = False,
    keep_log: bool = False,
) -> tuple[Metrics, ExecutionTrace]:
    """Execute ``planner`` under stochastic move failures until strong termination.

    The run fails once more than ``activation_bound`` activations were spent.
    ``plan`` (an offline :class:`~tisim.offline.Plan`) supplies hints for
    ``causal_pibt_plus``. Initial priorities are a random permutation drawn
    from ``rng``.
    """
    if isinstance(planner, str):
        planner = PlannerKind(planner)
    n = instance.agent_count
    if len(delays.p) != n:
        raise ValueError("delay model does not match the agent count")
    hints = None
    if planner.hinted:
        if plan is None:
            raise ValueError("causal_pibt_plus needs a plan")
        hints = [compress_plan(p) for p in plan.paths]
    perm = rng.permutation(n)
    config = initial_configuration(instance, [(int(k) + 1) / (n + 1) for k in perm], hints)
    agents = config.agents

    trace = ExecutionTrace(n, activation_log=[] if keep_log else None)
    trace.goal_first_visit = [0 if at_goal(a) else None for a in agents]
    if all(v is not None for v in trace.goal_first_visit):
        trace.weak_at = 0
    t = 0
    total = 0

    def observe(_i: int) -> None:
        nonlocal total
        total += 1
        for a in agents:
            if trace.goal_first_visit[a.id] is None and at_goal(a):
                trace.goal_first_visit[a.id] = t
                if all(v is not None for v in trace.goal_first_visit):
                    trace.weak_at = total
        if check_invariants:
            problems = check_config_invariants(config)
            if problems:
                raise InvariantViolation(f"t={t}: " + "; ".join(problems))

    trace.record(config, 0)
    status = "failed"
    while True:
        if strong_termination(config):
            status = "strong"
            break
        if total > activation_bound:
            break
        t += 1
        try:
            _, spent = phase2_until_stable(
                config, planner, rng, observer=observe, log_lines=trace.activation_log
            )
        except LivelockError as exc:
            log.warning("run aborted at t=%d: %s", t, exc)
            break
        moving = [a.id for a in agents if a.mode is EXTENDED]
        if not moving and spent == n:
            # only the confirming sweep ran and nothing can move: every later
            # timestep repeats it, so jump straight past the bound
            while total <= activation_bound:
                total += n
                trace.record(config, total)
            break
        draws = rng.random(len(moving))
        for i, r in zip(moving, draws):
            if r >= delays.p[i]:
                activate(config, planner, i, trace.activation_log)
                observe(i)
        trace.record(config, total)
    if status != "strong" and trace.weak_at is not None:
        status = "weak-only"
    trace.terminated = status
    metrics = compute_metrics(trace, instance.goals)
    metrics.p_bar = delays.p_bar
    return metrics, trace


# -- exhaustive exploration ---------------------------------------------------


def canonicalize(config: Configuration) -> Configuration:
    """Relabel priority epochs to small ranks, keeping order and bands.

    Planners only compare priorities, and each update lands below every
    current epoch of its band, so the relabelled configuration behaves
    identically while the explored state space stays finite.
    """
    used = {p.epoch for a in config.agents for p in (a.pori, a.ptmp)}
    away = sorted(e for e in used if GOAL_EPOCH_BASE < e < 0)
    arrived = sorted(e for e in used if e <= GOAL_EPOCH_BASE)
    rank = {0: 0}
    rank.update({e: k - len(away) for k, e in enumerate(away)})
    rank.update({e: GOAL_EPOCH_BASE + k - len(arrived) for k, e in enumerate(arrived)})
    for a in config.agents:
        a.pori = Priority(rank[a.pori.epoch], a.pori.tiebreak)
        a.ptmp = Priority(rank[a.ptmp.epoch], a.ptmp.tiebreak)
    config.goal_counter = max(len(away), len(arrived))
    return config


@dataclass
class ExploreReport:
    states: int
    edges: int
    complete: bool
    no_witness: int = 0
    persistent_cycles: list[list[int]] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return self.complete and not self.no_witness and not self.persistent_cycles and not self.violations

    def summary(self) -> str:
        status = "complete" if self.complete else "INCOMPLETE"
        return (
            f"{status}: {self.states} configurations, {self.edges} transitions; "
            f"without weak-termination witness: {self.no_witness}; "
            f"persistent request cycles: {len(self.persistent_cycles)}; "
            f"invariant violations: {len(self.violations)}"
        )


def _strongly_connected(nodes: list[int], succ: dict[int, list[int]]) -> list[list[int]]:
    """Iterative Tarjan restricted to ``nodes``."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    low[work[-1][0]] = min(low[work[-1][0]], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        on_stack.discard(w)
                        comp.append(w)
                        if w == v:
                            break
                    out.append(comp)
    return out


def exhaustive_explore(
    instance: Instance,
    planner: PlannerKind | str,
    max_configs: int = 200_000,
    hints=None,
) -> ExploreReport:
    """Enumerate every configuration reachable under any activation order.

    Any agent may be activated from any configuration, so extended agents
    may or may not complete their move between other activations. The
    report covers (a) configurations from which no path reaches weak
    termination, (b) request cycles that can persist along a fair infinite
    path (every agent activated infinitely often), and (c) structural
    invariant violations.
    """
    if isinstance(planner, str):
        planner = PlannerKind(planner)
    n = instance.agent_count
    start = canonicalize(initial_configuration(instance, hints=hints))
    flags0 = tuple(at_goal(a) for a in start.agents)
    keys = {(start.key(), flags0): 0}
    configs = [start]
    flags = [flags0]
    edges: list[list[tuple[int, int]]] = []
    violations: list[str] = []
    complete = True
    queue = deque([0])
    while queue:
        s = queue.popleft()
        base = configs[s]
        problems = check_config_invariants(base)
        violations.extend(f"state {s}: {p}" for p in problems)
        out = []
        for i in range(n):
            nxt = base.copy()
            planner.activate(nxt, i)
            canonicalize(nxt)
            f = tuple(flags[s][j] or at_goal(nxt.agents[j]) for j in range(n))
            key = (nxt.key(), f)
            d = keys.get(key)
            if d is None:
                if len(configs) >= max_configs:
                    complete = False
                    continue
                d = len(configs)
                keys[key] = d
                configs.append(nxt)
                flags.append(f)
                queue.append(d)
            out.append((i, d))
        edges.append(out)
    while len(edges) < len(configs):
        edges.append([])
    report = ExploreReport(len(configs), sum(len(e) for e in edges), complete, violations=violations)

    # (a) backward reachability from weak-termination states
    pred: list[list[int]] = [[] for _ in configs]
    for s, out in enumerate(edges):
        for _, d in out:
            pred[d].append(s)
    good = {s for s, f in enumerate(flags) if all(f)}
    queue = deque(good)
    while queue:
        d = queue.popleft()
        for s in pred[d]:
            if s not in good:
                good.add(s)
                queue.append(s)
    report.no_witness = len(configs) - len(good)

    # (b) fair cycles inside the region where one request cycle persists
    regions: dict[frozenset, list[int]] = {}
    for s, c in enumerate(configs):
        cyc = detect_request_cycle(c)
        if cyc is not None:
            ident = frozenset((j, c.agents[j].tail, c.agents[j].head) for j in cyc)
            regions.setdefault(ident, []).append(s)
    for ident, members in regions.items():
        inside = set(members)
        succ = {s: [d for _, d in edges[s] if d in inside] for s in members}
        for comp in _strongly_connected(members, succ):
            cset = set(comp)
            labels = {i for s in comp for i, d in edges[s] if d in cset}
            if len(labels) == n:
                report.persistent_cycles.append(sorted(j for j, _, _ in ident))
                break
    return report

"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Lines are printed as they are decided and repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from corpus import explorer_corpus, solver_corpus
from oracles import optimal_soc
from tisim.cli import run_once
from tisim.graph import read_instance
from tisim.model import REQUESTING
from tisim.offline import ConflictMode, Unsolvable, cbs_solve, ecbs_solve, soc
from tisim.simulator import exhaustive_explore, trace_conflicts

RESULTS: dict[str, str] = {}
BENCHES = ["benchmark-a", "three-bridge"]
SEEDS = range(100)


def report(key, ok, detail):
    line = f"criterion {key}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[key] = line
    print(line)
    return ok


def mutual_requests(snapshot):
    (m0, t0, h0), (m1, t1, h1) = snapshot
    return m0 is m1 is REQUESTING and (h0, h1) == (t1, t0)


def sign_test_p(wins, losses):
    """One-sided exact binomial p-value for ``wins`` out of ``wins + losses``."""
    n = wins + losses
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n


def test_criterion_1_safety(plans):
    started = time.perf_counter()
    runs = conflicts = 0
    for name in BENCHES:
        inst = read_instance(name)
        plan = plans(name)
        for alg in ("greedy", "causal_pibt", "causal_pibt_plus", "fsp", "mcp"):
            for p_bar in (0.0, 0.5, 0.9):
                for seed in SEEDS:
                    # InvariantViolation propagates and fails the test
                    _, trace = run_once(inst, alg, p_bar, seed, plan, check_invariants=True)
                    conflicts += bool(trace_conflicts(trace))
                    runs += 1
    elapsed = time.perf_counter() - started
    ok = conflicts == 0
    report("1", ok, f"{runs} runs, invariants held at every activation, {conflicts} runs with conflicts ({elapsed:.0f}s)")
    assert ok


def test_criterion_2_greedy_deadlock():
    p2 = read_instance("p2-swap")
    failed = persistent = 0
    for seed in SEEDS:
        metrics, trace = run_once(p2, "greedy", 0.5, seed)
        failed += not metrics.success and metrics.activations > 10_000
        persistent += all(mutual_requests(s) for s in trace.timesteps[1:])
    bench = read_instance("benchmark-a")
    wins = sum(run_once(bench, "greedy", 0.0, seed)[0].success for seed in SEEDS)
    ok = failed == 100 and persistent == 100 and wins <= 5
    report("2", ok, f"P2 failures {failed}/100, persistent 2-cycle {persistent}/100; benchmark-a successes {wins}/100")
    assert ok


def test_criterion_3_reachability():
    started = time.perf_counter()
    misses = []
    for name in ("c8-ring", "benchmark-a"):
        inst = read_instance(name)
        for p_bar in (0.0, 0.3, 0.6, 0.9):
            for seed in SEEDS:
                _, trace = run_once(inst, "causal_pibt", p_bar, seed)
                if trace.weak_at is None or trace.weak_at > 10_000:
                    misses.append((name, p_bar, seed))
    ok = not misses
    report("3", ok, f"weak termination in {800 - len(misses)}/800 runs ({time.perf_counter() - started:.0f}s)")
    assert ok


def test_criterion_4_deadlock_recovery():
    started = time.perf_counter()
    dirty = []
    states = 0
    for inst in explorer_corpus():
        rep = exhaustive_explore(inst, "causal_pibt")
        states += rep.states
        if not rep.clean:
            dirty.append((inst.name, rep.summary()))
    ok = not dirty
    report("4", ok, f"20 instances, {states} configurations, {len(dirty)} with findings ({time.perf_counter() - started:.0f}s)")
    assert ok, dirty


@pytest.mark.parametrize("alg", ["fsp", "mcp"])
def test_criterion_5_perfect_execution_policies(alg, plans):
    mismatches = []
    for name in BENCHES:
        inst, plan = read_instance(name), plans(name)
        for seed in SEEDS:
            m, _ = run_once(inst, alg, 0.0, seed, plan)
            if m.soc != soc(plan):
                mismatches.append((name, seed, m.soc))
    ok = not mismatches
    report(f"5/{alg}", ok, f"SOC equals plan SOC in {200 - len(mismatches)}/200 runs")
    assert ok


@pytest.mark.xfail(strict=True, reason="hints drop plan waits, so agents overtake the plan timing")
def test_criterion_5_perfect_execution_hinted(plans):
    matched = {}
    for name in BENCHES:
        inst, plan = read_instance(name), plans(name)
        socs = [run_once(inst, "causal_pibt_plus", 0.0, seed, plan)[0].soc for seed in SEEDS]
        matched[name] = (sum(s == soc(plan) for s in socs), soc(plan), min(socs), max(socs))
    ok = all(m == 100 for m, *_ in matched.values())
    detail = "; ".join(f"{k} matched {m}/100 (plan {p}, runs {lo}-{hi})" for k, (m, p, lo, hi) in matched.items())
    report("5/causal_pibt_plus", ok, detail)
    assert ok


def test_criterion_6_solver_optimality():
    started = time.perf_counter()
    checked = unsolvable = 0
    bad = []
    for inst in solver_corpus(per_size=40):
        for mode in ConflictMode:
            opt = optimal_soc(inst.graph.adjacency, inst.starts, inst.goals, mode is ConflictMode.FOLLOWING)
            if opt is None:
                with pytest.raises(Unsolvable):
                    cbs_solve(inst, mode)
                unsolvable += 1
                continue
            checked += 1
            c = soc(cbs_solve(inst, mode))
            e = soc(ecbs_solve(inst, 1.1, mode))
            if c != opt or e > 1.1 * opt + 1e-9:
                bad.append((inst.name, mode.value, opt, c, e))
    ok = not bad
    report(
        "6", ok,
        f"{checked} solvable cases, {len(bad)} mismatches; {unsolvable} unsolvable reported ({time.perf_counter() - started:.0f}s)",
    )
    assert ok, bad


def test_criterion_7_fsp_above_mcp(plans):
    inst, plan = read_instance("benchmark-a"), plans("benchmark-a")
    fsp = np.array([run_once(inst, "fsp", 0.5, seed, plan)[0].soc for seed in SEEDS], dtype=float)
    mcp = np.array([run_once(inst, "mcp", 0.5, seed, plan)[0].soc for seed in SEEDS], dtype=float)
    wins, losses = int((fsp > mcp).sum()), int((fsp < mcp).sum())
    p = sign_test_p(wins, losses)
    ok = fsp.mean() > mcp.mean() and p < 0.05
    report("7", ok, f"mean SOC fsp {fsp.mean():.1f} vs mcp {mcp.mean():.1f}; paired sign test {wins}:{losses}, p={p:.2g}")
    assert ok


def test_criterion_8_hints_help():
    started = time.perf_counter()
    inst = read_instance("random-32-32-10", n=35)
    plan = ecbs_solve(inst, 1.1, ConflictMode.FOLLOWING)
    bound = 1_000_000
    socs = {}
    for alg in ("causal_pibt", "causal_pibt_plus"):
        ms = [run_once(inst, alg, 0.5, seed, plan, activation_bound=bound)[0] for seed in range(50)]
        assert all(m.success for m in ms), alg
        socs[alg] = np.mean([m.soc for m in ms])
    ok = socs["causal_pibt_plus"] < socs["causal_pibt"]
    report(
        "8", ok,
        f"mean SOC causal_pibt {socs['causal_pibt']:.1f} vs causal_pibt_plus {socs['causal_pibt_plus']:.1f} "
        f"({time.perf_counter() - started:.0f}s)",
    )
    assert ok


def test_criterion_9_determinism(plans):
    differing = []
    for name in BENCHES:
        inst, plan = read_instance(name), plans(name)
        for alg in ("greedy", "causal_pibt", "causal_pibt_plus", "fsp", "mcp"):
            for seed in (0, 17):
                runs = [run_once(inst, alg, 0.5, seed, plan) for _ in range(2)]
                (m1, t1), (m2, t2) = runs
                if m1 != m2 or t1.format() != t2.format():
                    differing.append((name, alg, seed))
    ok = not differing
    report("9", ok, f"{20 - len(differing)}/20 tuples reproduced byte-identical metrics and traces")
    assert ok

"""Command line: solve, run, bench, verify, explore."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .graph import Instance, MapFormatError, read_instance
from .offline import (
    BudgetExceeded,
    ConflictMode,
    Plan,
    PlanShapeError,
    Unsolvable,
    cbs_solve,
    ecbs_solve,
    format_plan,
    makespan,
    parse_plan,
    soc,
    validate_plan,
)
from .policies import POLICIES
from .simulator import (
    DEFAULT_ACTIVATION_BOUND,
    InvariantViolation,
    Metrics,
    exhaustive_explore,
    run_time_independent,
    sample_delays,
)

log = logging.getLogger("tisim")

CSV_HEADER = ["map", "scen", "agents", "algorithm", "p_bar", "seed", "success", "soc", "makespan", "activations"]
ALGORITHMS = ("greedy", "causal_pibt", "causal_pibt_plus", "fsp", "mcp")
NEEDS_PLAN = ("causal_pibt_plus", "fsp", "mcp")

EXIT_ERROR = 1
EXIT_UNSOLVABLE = 2
EXIT_FAILED_RUN = 3
EXIT_INCOMPLETE = 4
EXIT_VIOLATION = 5


# -- shared pieces ----------------------------------------------------------------


@dataclass(frozen=True)
class SolverSpec:
    name: str = "cbs"  # cbs | ecbs
    w: float = 1.1
    mode: ConflictMode = ConflictMode.FOLLOWING
    budget: int = 100_000

    def solve(self, instance: Instance) -> Plan:
        if self.name == "cbs":
            return cbs_solve(instance, self.mode, self.budget)
        if self.name == "ecbs":
            return ecbs_solve(instance, self.w, self.mode, self.budget)
        raise ValueError(f"unknown solver {self.name!r}")


@lru_cache(maxsize=32)
def _cached_plan(map_name: str, scen: str, agents: int, spec: SolverSpec) -> Plan:
    return spec.solve(read_instance(map_name, scen, agents))


def cell_rng(seed: int, map_name: str, scen: str, agents: int, p_bar: float) -> tuple[np.random.Generator, np.random.Generator]:
    """Generators for (delay sampling, execution) of one run.

    The algorithm is left out of the descriptor so that different
    algorithms on the same cell and seed see identical delay draws.
    """
    tag = zlib.crc32(f"{map_name}|{scen}|{agents}|{p_bar!r}".encode())
    delays, execution = np.random.SeedSequence([seed, tag]).spawn(2)
    return np.random.default_rng(delays), np.random.default_rng(execution)


def run_once(
    instance: Instance,
    algorithm: str,
    p_bar: float,
    seed: int,
    plan: Plan | None = None,
    activation_bound: int = DEFAULT_ACTIVATION_BOUND,
    policy_bound: int | None = None,
    check_invariants: bool = False,
    greedy_faithful: bool = False,
    map_name: str = "",
    scen: str = "",
):
    """One seeded execution; returns (Metrics, ExecutionTrace)."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if algorithm in NEEDS_PLAN and plan is None:
        raise ValueError(f"{algorithm} needs a plan")
    rng_delay, rng_exec = cell_rng(seed, map_name or instance.graph.name, scen or instance.name, instance.agent_count, p_bar)
    delays = sample_delays(instance.agent_count, p_bar, rng_delay)
    if algorithm in POLICIES:
        metrics, trace = POLICIES[algorithm](plan, delays, rng_exec, policy_bound, instance.graph)
    else:
        planner = "greedy_faithful" if algorithm == "greedy" and greedy_faithful else algorithm
        metrics, trace = run_time_independent(
            instance, planner, delays, rng_exec, activation_bound,
            plan=plan, check_invariants=check_invariants,
        )
    metrics.seed = seed
    return metrics, trace


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:g}"
    return str(x)


def metrics_row(map_name: str, scen: str, agents: int, algorithm: str, m: Metrics) -> list[str]:
    return [
        map_name, scen, str(agents), algorithm, _fmt(m.p_bar), str(m.seed),
        _fmt(m.success), _fmt(m.soc), _fmt(m.makespan), str(m.activations),
    ]


def _csv_line(row) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(row)
    return buf.getvalue()


def _solver_from_args(args) -> SolverSpec:
    return SolverSpec(args.solver, args.w, ConflictMode(args.mode), args.budget)


def _load(args) -> Instance:
    return read_instance(args.map, args.scen, args.agents)


# -- solve ------------------------------------------------------------------------


def cmd_solve(args) -> int:
    try:
        instance = _load(args)
    except (MapFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        plan = _solver_from_args(args).solve(instance)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_UNSOLVABLE
    except Unsolvable as exc:
        print(f"unsolvable: {exc}", file=sys.stderr)
        return EXIT_UNSOLVABLE
    text = format_plan(plan, instance.graph, coords=args.coords)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"soc {soc(plan)} makespan {makespan(plan)}", file=sys.stderr if not args.out else sys.stdout)
    return 0


# -- run --------------------------------------------------------------------------


def _plan_for(args, instance: Instance) -> Plan | None:
    if args.algorithm not in NEEDS_PLAN:
        return None
    if args.plan:
        plan = parse_plan(Path(args.plan).read_text(), instance.graph)
        validate_plan(plan, instance.graph, ConflictMode(args.mode), instance)
        return plan
    return _solver_from_args(args).solve(instance)


def cmd_run(args) -> int:
    try:
        instance = _load(args)
        plan = _plan_for(args, instance)
        metrics, trace = run_once(
            instance, args.algorithm, args.p_bar, args.seed, plan,
            activation_bound=args.bound, policy_bound=args.policy_bound,
            check_invariants=args.check_invariants, greedy_faithful=args.greedy_faithful,
            map_name=args.map, scen=args.scen or args.map,
        )
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (MapFormatError, PlanShapeError, FileNotFoundError, ValueError, Unsolvable, BudgetExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.header:
        sys.stdout.write(_csv_line(CSV_HEADER))
    sys.stdout.write(_csv_line(metrics_row(args.map, args.scen or args.map, instance.agent_count, args.algorithm, metrics)))
    if args.trace:
        Path(args.trace).write_text(trace.format())
    return 0 if metrics.success else EXIT_FAILED_RUN


# -- bench ------------------------------------------------------------------------


@dataclass
class CampaignConfig:
    map: str
    scen: str = ""
    agents: list[int] = field(default_factory=list)
    p_bar: list[float] = field(default_factory=lambda: [0.0])
    algorithms: list[str] = field(default_factory=lambda: ["causal_pibt"])
    repetitions: int = 100
    seed_base: int = 0
    activation_bound: int = DEFAULT_ACTIVATION_BOUND
    policy_bound: int | None = None
    solver: str = "cbs"
    w: float = 1.1
    mode: str = "following"
    budget: int = 100_000
    greedy_faithful: bool = False
    output: str = ""

    def __post_init__(self):
        if not self.scen:
            self.scen = self.map
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")
        if any(a in NEEDS_PLAN for a in self.algorithms) and self.solver not in ("cbs", "ecbs"):
            raise ValueError("plan-based algorithms need solver = cbs or ecbs")
        ConflictMode(self.mode)

    @property
    def solver_spec(self) -> SolverSpec:
        return SolverSpec(self.solver, self.w, ConflictMode(self.mode), self.budget)

    @classmethod
    def parse(cls, text: str) -> CampaignConfig:
        """``key = value`` lines; lists are comma separated; ``#`` starts a comment."""
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value
        if "map" not in raw:
            raise ValueError("config needs a map")

        def items(key):
            return [s.strip() for s in raw[key].split(",") if s.strip()]

        kw: dict = {"map": raw.pop("map")}
        conv = {
            "scen": str, "repetitions": int, "seed_base": int, "activation_bound": int,
            "policy_bound": int, "solver": str, "w": float, "mode": str, "budget": int, "output": str,
        }
        for key in list(raw):
            if key == "agents":
                kw[key] = [int(x) for x in items(key)]
            elif key == "p_bar":
                kw[key] = [float(x) for x in items(key)]
            elif key == "algorithms":
                kw[key] = items(key)
            elif key == "greedy_faithful":
                kw[key] = raw[key].lower() in ("1", "true", "yes")
            elif key in conv:
                kw[key] = conv[key](raw[key])
            else:
                raise ValueError(f"unknown config key {key!r}")
        return cls(**kw)

    def cells(self):
        agents = self.agents or [None]
        for n in agents:
            for alg in self.algorithms:
                for p in self.p_bar:
                    for rep in range(self.repetitions):
                        yield n, alg, p, self.seed_base + rep


def _bench_cell(cfg: CampaignConfig, n, alg: str, p: float, seed: int) -> list[str]:
    try:
        instance = read_instance(cfg.map, cfg.scen, n)
        plan = _cached_plan(cfg.map, cfg.scen, instance.agent_count, cfg.solver_spec) if alg in NEEDS_PLAN else None
        m, _ = run_once(
            instance, alg, p, seed, plan, cfg.activation_bound, cfg.policy_bound,
            greedy_faithful=cfg.greedy_faithful, map_name=cfg.map, scen=cfg.scen,
        )
        return metrics_row(cfg.map, cfg.scen, instance.agent_count, alg, m)
    except Exception as exc:  # recorded in-row, the campaign keeps going
        log.warning("cell %s/%s/%s/%s failed: %s", n, alg, p, seed, exc)
        return [cfg.map, cfg.scen, _fmt(n), alg, _fmt(p), str(seed), "error", "", "", ""]


def _bench_star(job):
    return _bench_cell(*job)


def run_campaign(cfg: CampaignConfig, workers: int = 1) -> list[list[str]]:
    """All rows in (cell, repetition) order, independent of ``workers``."""
    jobs = [(cfg, *c) for c in cfg.cells()]
    if workers <= 1:
        return [_bench_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_bench_star, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


def summarize(rows: list[list[str]]) -> str:
    """Per (agents, algorithm, p_bar): success count and SOC quartiles over successes."""
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r[2], r[3], r[4]), []).append(r)
    out = ["agents algorithm p_bar runs success soc_mean soc_q1 soc_median soc_q3"]
    for (n, alg, p), rs in groups.items():
        socs = np.array([int(r[7]) for r in rs if r[6] == "true"], dtype=float)
        if len(socs):
            q1, med, q3 = np.percentile(socs, [25, 50, 75])
            stats = f"{socs.mean():.2f} {q1:g} {med:g} {q3:g}"
        else:
            stats = "- - - -"
        out.append(f"{n} {alg} {p} {len(rs)} {len(socs)} {stats}")
    return "\n".join(out)


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    return int(os.environ.get("TISIM_WORKERS", "1"))


def cmd_bench(args) -> int:
    try:
        cfg = CampaignConfig.parse(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out_path = args.out or cfg.output
    rows = run_campaign(cfg, _workers(args))
    text = _csv_line(CSV_HEADER) + "".join(_csv_line(r) for r in rows)
    if out_path:
        Path(out_path).write_text(text)
        print(summarize(rows))
    else:
        sys.stdout.write(text)
        print(summarize(rows), file=sys.stderr)
    return 0


# -- verify -----------------------------------------------------------------------


def cmd_verify(args) -> int:
    try:
        instance = _load(args)
        plan = parse_plan(Path(args.plan).read_text(), instance.graph)
        bad = validate_plan(plan, instance.graph, ConflictMode(args.mode), instance)
    except (MapFormatError, PlanShapeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if bad is not None:
        print(f"violation: {bad.kind} conflict between agents {bad.i} and {bad.j} at node {bad.v}, t={bad.t}")
        return EXIT_VIOLATION
    print(f"ok soc {soc(plan)} makespan {makespan(plan)}")
    status = 0
    for alg in args.invariants or ():
        for seed in range(args.seeds):
            try:
                run_once(instance, alg, args.p_bar, seed, plan if alg in NEEDS_PLAN else None, check_invariants=True)
            except InvariantViolation as exc:
                print(f"{alg} seed {seed}: {exc}")
                status = EXIT_VIOLATION
                break
        else:
            print(f"{alg}: invariants held over {args.seeds} seeds")
    return status


# -- explore ----------------------------------------------------------------------


def cmd_explore(args) -> int:
    try:
        instance = _load(args)
    except (MapFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    planner = "greedy_faithful" if args.algorithm == "greedy" and args.greedy_faithful else args.algorithm
    report = exhaustive_explore(instance, planner, args.max_configs)
    print(report.summary())
    for cyc in report.persistent_cycles[:5]:
        print(f"persistent request cycle among agents {cyc}")
    for v in report.violations[:5]:
        print(v)
    if not report.complete:
        return EXIT_INCOMPLETE
    return 0 if report.clean else EXIT_VIOLATION


# -- parser -----------------------------------------------------------------------


def _instance_args(p) -> None:
    p.add_argument("map", help="map file or packaged benchmark name")
    p.add_argument("scen", nargs="?", default=None, help="scenario file (default: same name as map)")
    p.add_argument("-n", "--agents", type=int, default=None, help="use the first n scenario rows")


def _solver_args(p) -> None:
    p.add_argument("--solver", choices=("cbs", "ecbs"), default="cbs")
    p.add_argument("--w", type=float, default=1.1, help="ECBS suboptimality factor")
    p.add_argument("--mode", choices=[m.value for m in ConflictMode], default="following")
    p.add_argument("--budget", type=int, default=100_000, help="high-level node budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tisim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute an offline plan")
    _instance_args(p)
    _solver_args(p)
    p.add_argument("-o", "--out", help="plan file to write (default: stdout)")
    p.add_argument("--coords", action="store_true", help="write x,y cells instead of node ids")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="one seeded execution, printed as a CSV row")
    _instance_args(p)
    _solver_args(p)
    p.add_argument("-a", "--algorithm", choices=ALGORITHMS, required=True)
    p.add_argument("--p-bar", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bound", type=int, default=DEFAULT_ACTIVATION_BOUND, help="activation bound")
    p.add_argument("--policy-bound", type=int, default=None, help="timestep bound for fsp/mcp")
    p.add_argument("--plan", help="plan file (otherwise solved on the fly)")
    p.add_argument("--trace", help="write the execution trace here")
    p.add_argument("--check-invariants", action="store_true")
    p.add_argument("--greedy-faithful", action="store_true", help="greedy never rests on its goal")
    p.add_argument("--header", action="store_true", help="print the CSV header first")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run a campaign from a key=value config file")
    p.add_argument("config")
    p.add_argument("-o", "--out")
    p.add_argument("--workers", type=int, default=None, help="parallel processes (default $TISIM_WORKERS or 1)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="validate a plan file, optionally check invariants over runs")
    _instance_args(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--mode", choices=[m.value for m in ConflictMode], default="following")
    p.add_argument("--invariants", nargs="*", choices=ALGORITHMS, help="algorithms to run with invariant checks")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--p-bar", type=float, default=0.5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("explore", help="exhaustive state-space exploration of a tiny instance")
    _instance_args(p)
    p.add_argument("-a", "--algorithm", choices=("greedy", "causal_pibt"), default="causal_pibt")
    p.add_argument("--max-configs", type=int, default=200_000)
    p.add_argument("--greedy-faithful", action="store_true")
    p.set_defaults(func=cmd_explore)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

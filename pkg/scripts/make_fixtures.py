"""Regenerate the packaged benchmark files under src/tisim/data/.

benchmark-a / three-bridge are written from cell coordinates with y
pointing up, so rows are flipped.
random-32-32-10 is a seeded stand-in: the public MovingAI file is not
vendored, so a 32x32 map with 10% obstacles is drawn, restricted to its
largest connected component, and a 35+ agent scenario sampled on it.
"""

from __future__ import annotations

import random
from pathlib import Path

from tisim.graph import bfs_distances, format_map, format_scenario, grid_graph, Instance, UNREACHABLE

DATA = Path(__file__).resolve().parents[1] / "src" / "tisim" / "data"


def flip(cells, height):
    return [(x, height - 1 - y) for x, y in cells]


def write(name, graph, starts, goals):
    (DATA / f"{name}.map").write_text(format_map(graph))
    s = [graph.node_at(x, y) for x, y in starts]
    g = [graph.node_at(x, y) for x, y in goals]
    inst = Instance(graph, s, g)
    inst.validate()
    (DATA / f"{name}.scen").write_text(format_scenario(inst, f"{name}.map"))


def benchmark_a():
    g = grid_graph(6, 6, name="benchmark-a")
    pairs = [((0, 3), (5, 3)), ((0, 1), (5, 1)), ((2, 0), (2, 5)), ((4, 0), (4, 5)),
             ((5, 2), (0, 2)), ((5, 4), (0, 4)), ((3, 5), (3, 0)), ((1, 5), (1, 0))]
    write("benchmark-a", g, flip([p[0] for p in pairs], 6), flip([p[1] for p in pairs], 6))


def three_bridge():
    blocked = flip([(2, 1), (2, 3), (3, 1), (3, 3)], 5)
    g = grid_graph(6, 5, blocked, name="three-bridge")
    pairs = [((0, 0), (5, 0)), ((0, 2), (5, 2)), ((0, 4), (5, 4)),
             ((5, 0), (0, 0)), ((5, 2), (0, 2)), ((5, 4), (0, 4))]
    write("three-bridge", g, flip([p[0] for p in pairs], 5), flip([p[1] for p in pairs], 5))


def tiny():
    write("p2-swap", grid_graph(2, 1), [(0, 0), (1, 0)], [(1, 0), (0, 0)])
    write("c4-swap", grid_graph(2, 2), [(0, 0), (1, 1)], [(1, 1), (0, 0)])
    # 3x3 ring around a blocked center is the cycle C8
    ring = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
    starts = ring[:7]
    goals = [ring[(k + 4) % 8] for k in range(7)]
    write("c8-ring", grid_graph(3, 3, [(1, 1)]), starts, goals)


def random_32(seed=20201012, obstacle_ratio=0.10, agents=100):
    rng = random.Random(seed)
    cells = [(x, y) for y in range(32) for x in range(32)]
    blocked = set(rng.sample(cells, round(obstacle_ratio * len(cells))))
    g = grid_graph(32, 32, blocked)
    # keep the component containing the most nodes
    seen, best = set(), set()
    for v in range(g.node_count):
        if v in seen:
            continue
        d = bfs_distances(g, v)
        comp = {u for u, dv in enumerate(d) if dv != UNREACHABLE}
        seen |= comp
        if len(comp) > len(best):
            best = comp
    keep = {g.node_coords[v] for v in best}
    g = grid_graph(32, 32, [c for c in cells if c not in keep], name="random-32-32-10")
    free = sorted(keep)
    starts = rng.sample(free, agents)
    goals = rng.sample(free, agents)
    write("random-32-32-10", g, starts, goals)


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    benchmark_a()
    three_bridge()
    tiny()
    random_32()
    print("wrote", sorted(p.name for p in DATA.iterdir()))

"""Environment graphs, MovingAI benchmark parsing and distance queries."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

# Sentinel for disconnected pairs; compares above every finite hop count.
UNREACHABLE = 2**62

PASSABLE = frozenset(".G")
BLOCKED = frozenset("@TO")


class MapFormatError(ValueError):
    """Raised for malformed ``.map`` or ``.scen`` contents."""


@dataclass(eq=False)
class Graph:
    """Undirected, unweighted graph over node ids ``0 .. node_count - 1``.

    Grid-derived graphs also carry ``grid_shape`` as ``(width, height)`` and
    the ``(x, y)`` cell of every node.
    """

    node_count: int
    adjacency: list[tuple[int, ...]]
    grid_shape: tuple[int, int] | None = None
    node_coords: list[tuple[int, int]] | None = None
    name: str = ""
    _dist: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _coord_index: dict[tuple[int, int], int] | None = field(default=None, repr=False)

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adjacency[v]

    @property
    def edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    @property
    def max_degree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.node_count) for v in self.adjacency[u] if u < v]

    def node_at(self, x: int, y: int) -> int | None:
        if self.node_coords is None:
            raise ValueError(f"graph {self.name!r} has no cell coordinates")
        if self._coord_index is None:
            self._coord_index = {c: i for i, c in enumerate(self.node_coords)}
        return self._coord_index.get((x, y))

    def distance_table(self, goal: int) -> list[int]:
        """Hop counts from every node to ``goal`` (computed once per goal)."""
        table = self._dist.get(goal)
        if table is None:
            table = bfs_distances(self, goal)
            # whole-list assignment keeps concurrent readers consistent
            self._dist[goal] = table
        return table

    def distance(self, u: int, v: int) -> int:
        return self.distance_table(v)[u]

    def check(self) -> list[str]:
        """Return a list of structural problems (empty when well formed)."""
        problems = []
        for v, nbrs in enumerate(self.adjacency):
            for u in nbrs:
                if not 0 <= u < self.node_count:
                    problems.append(f"node {v}: neighbor {u} out of range")
                elif u == v:
                    problems.append(f"node {v}: self-loop")
                elif v not in self.adjacency[u]:
                    problems.append(f"edge {v}->{u} not symmetric")
        if self.node_coords is not None:
            for v, nbrs in enumerate(self.adjacency):
                x, y = self.node_coords[v]
                for u in nbrs:
                    ux, uy = self.node_coords[u]
                    if abs(ux - x) + abs(uy - y) != 1:
                        problems.append(f"edge {v}-{u} joins non-adjacent cells")
        return problems


@dataclass(eq=False)
class Instance:
    graph: Graph
    starts: list[int]
    goals: list[int]
    name: str = ""

    @property
    def agent_count(self) -> int:
        return len(self.starts)

    def validate(self, reachability: bool = False) -> None:
        if len(self.starts) != len(self.goals):
            raise ValueError("starts and goals differ in length")
        n = self.graph.node_count
        for v in (*self.starts, *self.goals):
            if not 0 <= v < n:
                raise ValueError(f"node {v} out of range")
        if len(set(self.starts)) != len(self.starts):
            raise ValueError("duplicate start")
        if len(set(self.goals)) != len(self.goals):
            raise ValueError("duplicate goal")
        if reachability and self.agent_count >= n:
            raise ValueError("reachability requires fewer agents than nodes")

    def subset(self, n: int) -> Instance:
        return Instance(self.graph, self.starts[:n], self.goals[:n], self.name)


def from_edges(node_count: int, edges, name: str = "") -> Graph:
    adj: list[set[int]] = [set() for _ in range(node_count)]
    for u, v in edges:
        if u == v:
            raise ValueError(f"self-loop at {u}")
        adj[u].add(v)
        adj[v].add(u)
    return Graph(node_count, [tuple(sorted(a)) for a in adj], name=name)


def path_graph(n: int) -> Graph:
    return from_edges(n, [(i, i + 1) for i in range(n - 1)], name=f"P{n}")


def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise ValueError("a cycle needs at least 3 nodes")
    return from_edges(n, [(i, (i + 1) % n) for i in range(n)], name=f"C{n}")


def grid_graph(width: int, height: int, blocked=(), name: str = "") -> Graph:
    """4-connected grid; ``blocked`` holds ``(x, y)`` cells to drop."""
    blocked = set(blocked)
    rows = [
        "".join("@" if (x, y) in blocked else "." for x in range(width))
        for y in range(height)
    ]
    return grid_from_rows(rows, name=name or f"grid-{width}x{height}")


def grid_from_rows(rows: list[str], name: str = "") -> Graph:
    height = len(rows)
    width = len(rows[0]) if rows else 0
    index: dict[tuple[int, int], int] = {}
    coords: list[tuple[int, int]] = []
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch in PASSABLE:
                index[(x, y)] = len(coords)
                coords.append((x, y))
    adjacency = []
    for x, y in coords:
        nbrs = [
            index[c]
            for c in ((x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1))
            if c in index
        ]
        adjacency.append(tuple(sorted(nbrs)))
    g = Graph(len(coords), adjacency, (width, height), coords, name)
    g._coord_index = index
    return g


def load_map(text: str, name: str = "") -> Graph:
    """Parse MovingAI ``.map`` text into a 4-connected grid graph.

    Passable cells become nodes, numbered row-major.
    """
    lines = text.splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "map":
            break
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("type", "height", "width"):
            raise MapFormatError(f"line {i}: unexpected header line {line!r}")
        header[parts[0]] = parts[1]
    else:
        raise MapFormatError(f"line {i}: missing 'map' line")
    for key in ("height", "width"):
        if key not in header:
            raise MapFormatError(f"line {i}: header lacks {key!r}")
    try:
        height, width = int(header["height"]), int(header["width"])
    except ValueError as exc:
        raise MapFormatError(f"bad height/width in header: {exc}") from None
    rows = []
    for y in range(height):
        lineno = i + y + 1
        if i + y >= len(lines):
            raise MapFormatError(f"line {lineno}: expected {height} map rows, got {y}")
        row = lines[i + y].rstrip("\r\n")
        if len(row) != width:
            raise MapFormatError(f"line {lineno}: row has {len(row)} cells, expected {width}")
        bad = set(row) - PASSABLE - BLOCKED
        if bad:
            raise MapFormatError(f"line {lineno}: unknown cell character(s) {sorted(bad)}")
        rows.append(row)
    return grid_from_rows(rows, name=name)


def load_scenario(text: str, graph: Graph, n: int, name: str = "") -> Instance:
    """Take the first ``n`` rows of a MovingAI ``.scen`` file as an instance."""
    starts: list[int] = []
    goals: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if len(starts) == n:
            break
        if not line.strip() or line.startswith("version"):
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            cols = line.split()
        if len(cols) < 8:
            raise MapFormatError(f"line {lineno}: expected at least 8 columns")
        try:
            sx, sy, gx, gy = (int(c) for c in cols[4:8])
        except ValueError:
            raise MapFormatError(f"line {lineno}: non-integer coordinates") from None
        s, g = graph.node_at(sx, sy), graph.node_at(gx, gy)
        if s is None:
            raise MapFormatError(f"line {lineno}: start ({sx},{sy}) is not passable")
        if g is None:
            raise MapFormatError(f"line {lineno}: goal ({gx},{gy}) is not passable")
        if s in starts:
            raise MapFormatError(f"line {lineno}: duplicate start ({sx},{sy})")
        if g in goals:
            raise MapFormatError(f"line {lineno}: duplicate goal ({gx},{gy})")
        starts.append(s)
        goals.append(g)
    if len(starts) < n:
        raise MapFormatError(f"scenario has {len(starts)} rows, {n} requested")
    return Instance(graph, starts, goals, name)


def format_map(graph: Graph) -> str:
    if graph.grid_shape is None or graph.node_coords is None:
        raise ValueError("only grid graphs can be written as .map")
    width, height = graph.grid_shape
    cells = [["@"] * width for _ in range(height)]
    for x, y in graph.node_coords:
        cells[y][x] = "."
    body = "\n".join("".join(r) for r in cells)
    return f"type octile\nheight {height}\nwidth {width}\nmap\n{body}\n"


def format_scenario(instance: Instance, map_name: str) -> str:
    g = instance.graph
    if g.node_coords is None or g.grid_shape is None:
        raise ValueError("only grid instances can be written as .scen")
    width, height = g.grid_shape
    lines = ["version 1"]
    for s, t in zip(instance.starts, instance.goals):
        (sx, sy), (gx, gy) = g.node_coords[s], g.node_coords[t]
        d = g.distance(s, t)
        lines.append(f"0\t{map_name}\t{width}\t{height}\t{sx}\t{sy}\t{gx}\t{gy}\t{d}")
    return "\n".join(lines) + "\n"


def bfs_distances(graph: Graph, source: int) -> list[int]:
    dist = [UNREACHABLE] * graph.node_count
    dist[source] = 0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        d = dist[v] + 1
        for u in graph.adjacency[v]:
            if dist[u] == UNREACHABLE:
                dist[u] = d
                queue.append(u)
    return dist


def is_connected(graph: Graph) -> bool:
    if graph.node_count == 0:
        return True
    return UNREACHABLE not in bfs_distances(graph, 0)


def articulation_points(graph: Graph) -> set[int]:
    """Cut vertices via iterative lowlink DFS."""
    n = graph.node_count
    disc = [-1] * n
    low = [0] * n
    cut: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        root_children = 0
        stack = [(root, -1, iter(graph.adjacency[root]))]
        while stack:
            v, parent, it = stack[-1]
            for u in it:
                if disc[u] == -1:
                    disc[u] = low[u] = timer
                    timer += 1
                    if v == root:
                        root_children += 1
                    stack.append((u, v, iter(graph.adjacency[u])))
                    break
                if u != parent:
                    low[v] = min(low[v], disc[u])
            else:
                stack.pop()
                if parent != -1:
                    low[parent] = min(low[parent], low[v])
                    if parent != root and low[v] >= disc[parent]:
                        cut.add(parent)
        if root_children > 1:
            cut.add(root)
    return cut


def is_biconnected(graph: Graph) -> bool:
    if graph.node_count < 3:
        raise ValueError("biconnectivity is only defined here for graphs with >= 3 nodes")
    return is_connected(graph) and not articulation_points(graph)


# -- packaged benchmarks -----------------------------------------------------

DATA_DIR = resources.files("tisim") / "data"


def resolve_benchmark_path(name_or_path: str, suffix: str) -> Path:
    """Map a packaged benchmark name (e.g. ``benchmark-a``) to its file."""
    p = Path(name_or_path)
    if p.exists():
        return p
    candidate = DATA_DIR / f"{name_or_path}{suffix}"
    if candidate.is_file():
        return Path(str(candidate))
    raise FileNotFoundError(name_or_path)


def read_map(name_or_path: str) -> Graph:
    path = resolve_benchmark_path(name_or_path, ".map")
    return load_map(path.read_text(), name=path.stem)


def read_instance(map_name: str, scen_name: str | None = None, n: int | None = None) -> Instance:
    """Load a map and the first ``n`` agents of a scenario (all rows if ``n`` is None)."""
    graph = read_map(map_name)
    scen_path = resolve_benchmark_path(scen_name or map_name, ".scen")
    text = scen_path.read_text()
    if n is None:
        n = sum(1 for line in text.splitlines() if line.strip() and not line.startswith("version"))
    return load_scenario(text, graph, n, name=scen_path.stem)

"""Problem graphs: generation, dead-end pruning, BFS oracle and file I/O.

A graph is undirected for path-finding purposes, but every edge carries an
orientation (``u`` is the positive terminal of its memristor) because the
Chang device law is polarity sensitive.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DisconnectedTerminals, GenerationFailed, MalformedGraphFile

MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class Edge:
    edge_id: int
    u: int
    v: int

    def other(self, node: int) -> int:
        return self.v if node == self.u else self.u


@dataclass(frozen=True, eq=False)
class Graph:
    node_ids: list
    edges: list
    start: int
    end: int
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> dict:
        """node -> list of (edge_id, neighbour), sorted by edge id."""
        adj = {n: [] for n in self.node_ids}
        for e in self.edges:
            adj[e.u].append((e.edge_id, e.v))
            adj[e.v].append((e.edge_id, e.u))
        for lst in adj.values():
            lst.sort()
        return adj

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def edge_between(self, a: int, b: int) -> Edge:
        for eid, nb in self.adjacency[a]:
            if nb == b:
                return self.edge_by_id[eid]
        raise KeyError((a, b))

    @cached_property
    def edge_by_id(self) -> dict:
        return {e.edge_id: e for e in self.edges}

    def validate(self) -> None:
        """Raise ValueError if a structural invariant is broken."""
        nodes = set(self.node_ids)
        if len(nodes) != len(self.node_ids):
            raise ValueError("duplicate node ids")
        if self.start == self.end:
            raise ValueError("start == end")
        if self.start not in nodes or self.end not in nodes:
            raise ValueError("terminal not in node set")
        seen_ids, seen_pairs = set(), set()
        for e in self.edges:
            if e.u == e.v:
                raise ValueError(f"self-loop on edge {e.edge_id}")
            if e.u not in nodes or e.v not in nodes:
                raise ValueError(f"edge {e.edge_id} references unknown node")
            if e.edge_id in seen_ids:
                raise ValueError(f"duplicate edge id {e.edge_id}")
            pair = (min(e.u, e.v), max(e.u, e.v))
            if pair in seen_pairs:
                raise ValueError(f"duplicate edge {pair}")
            seen_ids.add(e.edge_id)
            seen_pairs.add(pair)

    def to_dict(self) -> dict:
        return {
            "nodes": sorted(self.node_ids),
            "edges": [{"id": e.edge_id, "u": e.u, "v": e.v}
                      for e in sorted(self.edges, key=lambda e: e.edge_id)],
            "start": self.start,
            "end": self.end,
            "metadata": self.metadata,
        }


@dataclass(frozen=True)
class PathOracle:
    path: list
    length_N: int
    unique: bool
    path_count: int = 1


# --------------------------------------------------------------------------
# preprocessing


def _components_from(start, adj):
    seen = {start}
    queue = deque([start])
    while queue:
        n = queue.popleft()
        for _, nb in adj[n]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return seen


def prune(graph: Graph) -> Graph:
    """Strip nodes off the terminal component and dead-end branches.

    Keeps the component containing ``start`` and then removes non-terminal
    degree-1 nodes until none remain. Edge ids are preserved.

    Raises:
        DisconnectedTerminals: ``end`` is not reachable from ``start``.
    """
    adj = graph.adjacency
    keep = _components_from(graph.start, adj)
    if graph.end not in keep:
        raise DisconnectedTerminals(f"nodes {graph.start} and {graph.end} are not connected")
    degree = {n: sum(1 for _, nb in adj[n] if nb in keep) for n in keep}
    terminals = (graph.start, graph.end)
    stack = [n for n, d in degree.items() if d <= 1 and n not in terminals]
    while stack:
        n = stack.pop()
        if n not in keep:
            continue
        keep.discard(n)
        for _, nb in adj[n]:
            if nb in keep:
                degree[nb] -= 1
                if degree[nb] <= 1 and nb not in terminals:
                    stack.append(nb)
    nodes = [n for n in graph.node_ids if n in keep]
    edges = [e for e in graph.edges if e.u in keep and e.v in keep]
    return Graph(nodes, edges, graph.start, graph.end, dict(graph.metadata))


def _bfs_layers(graph: Graph):
    dist = {graph.start: 0}
    count = {graph.start: 1}
    order = [graph.start]
    queue = deque([graph.start])
    adj = graph.adjacency
    while queue:
        n = queue.popleft()
        for _, nb in adj[n]:
            if nb not in dist:
                dist[nb] = dist[n] + 1
                count[nb] = count[n]
                order.append(nb)
                queue.append(nb)
            elif dist[nb] == dist[n] + 1:
                count[nb] += count[n]
    return dist, count


def bfs_oracle(graph: Graph) -> PathOracle:
    """Shortest start-end path by breadth-first search.

    Shortest paths are counted on the BFS layer DAG, so ``unique`` is exact.
    When several shortest paths exist, the returned one follows the
    lowest-id predecessor at each layer.
    """
    dist, count = _bfs_layers(graph)
    if graph.end not in dist:
        raise DisconnectedTerminals("end not reachable from start")
    path = [graph.end]
    adj = graph.adjacency
    while path[-1] != graph.start:
        n = path[-1]
        prev = min(nb for _, nb in adj[n] if dist.get(nb) == dist[n] - 1)
        path.append(prev)
    path.reverse()
    return PathOracle(path, dist[graph.end], count[graph.end] == 1, count[graph.end])


def orient(graph: Graph) -> Graph:
    """Point each edge away from ``start``: u is the endpoint nearer in BFS order.

    Equal BFS distances are broken by the lower node id. Edge ids are
    renumbered 0..E-1 in their existing order.
    """
    dist, _ = _bfs_layers(graph)
    edges = []
    for k, e in enumerate(sorted(graph.edges, key=lambda e: e.edge_id)):
        a, b = e.u, e.v
        if (dist[b], b) < (dist[a], a):
            a, b = b, a
        edges.append(Edge(k, a, b))
    return Graph(list(graph.node_ids), edges, graph.start, graph.end, dict(graph.metadata))


# --------------------------------------------------------------------------
# generators


def _grid_edges(rows, cols):
    pairs = []
    for r in range(rows):
        for c in range(cols):
            n = r * cols + c
            if c + 1 < cols:
                pairs.append((n, n + 1))
            if r + 1 < rows:
                pairs.append((n, n + cols))
    return pairs


def _ws_edges(n, k, beta, rng):
    """Watts-Strogatz ring lattice with rewiring; duplicates are redrawn."""
    adj = [set() for _ in range(n)]
    order = []
    for j in range(1, k // 2 + 1):
        for i in range(n):
            t = (i + j) % n
            adj[i].add(t)
            adj[t].add(i)
            order.append((i, t))
    if beta > 0:
        for idx, (i, t) in enumerate(order):
            if rng.random() >= beta:
                continue
            if len(adj[i]) >= n - 1:
                continue
            while True:
                w = int(rng.integers(n))
                if w != i and w not in adj[i]:
                    break
            adj[i].discard(t)
            adj[t].discard(i)
            adj[i].add(w)
            adj[w].add(i)
            order[idx] = (i, w)
    return order


def _finish(nodes, pairs, rng, metadata):
    """One rejection-sampling attempt: terminals, pruning, uniqueness, orientation."""
    a, b = rng.choice(len(nodes), size=2, replace=False)
    start, end = nodes[int(a)], nodes[int(b)]
    raw = Graph(list(nodes), [Edge(k, u, v) for k, (u, v) in enumerate(pairs)],
                start, end, metadata)
    try:
        g = prune(raw)
    except DisconnectedTerminals:
        return None
    if not bfs_oracle(g).unique:
        return None
    return orient(g)


def _generate(make_pairs, nodes, seed, metadata, max_attempts):
    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        pairs = make_pairs(rng)
        g = _finish(nodes, pairs, rng, dict(metadata, attempt=attempt))
        if g is not None:
            return g
    raise GenerationFailed(f"no acceptable instance after {max_attempts} attempts "
                           f"({metadata})")


def generate_grid(rows: int, cols: int, removal_prob: float, seed: int,
                  max_attempts: int = MAX_ATTEMPTS) -> Graph:
    """Square grid with independently removed edges, preprocessed.

    Raises:
        GenerationFailed: no connected, uniquely-solvable instance was found.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValueError("grid needs at least two nodes")
    if not 0 <= removal_prob < 1:
        raise ValueError("removal_prob must be in [0, 1)")
    base = _grid_edges(rows, cols)

    def make_pairs(rng):
        if removal_prob == 0:
            return base
        keep = rng.random(len(base)) >= removal_prob
        return [p for p, k in zip(base, keep) if k]

    meta = {"topology": "grid", "rows": rows, "cols": cols,
            "removal_prob": removal_prob, "seed": seed}
    return _generate(make_pairs, list(range(rows * cols)), seed, meta, max_attempts)


def generate_small_world(n: int, k: int, beta: float, seed: int,
                         max_attempts: int = MAX_ATTEMPTS) -> Graph:
    """Watts-Strogatz small-world network, preprocessed like the grids."""
    if n < 4:
        raise ValueError("n must be >= 4")
    if k < 2 or k % 2 or k >= n:
        raise ValueError("k must be even with 2 <= k < n")
    if not 0 <= beta <= 1:
        raise ValueError("beta must be in [0, 1]")
    meta = {"topology": "small_world", "n": n, "k": k, "beta": beta, "seed": seed}
    return _generate(lambda rng: _ws_edges(n, k, beta, rng), list(range(n)), seed,
                     meta, max_attempts)


# --------------------------------------------------------------------------
# serialization


def dumps_graph(graph: Graph) -> str:
    return json.dumps(graph.to_dict(), sort_keys=True, indent=1) + "\n"


def save_graph(graph: Graph, destination) -> None:
    Path(destination).write_text(dumps_graph(graph), encoding="utf-8")


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedGraphFile(f"{where}: missing key {key!r}")
    return obj[key]


def _as_int(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedGraphFile(f"{where}: expected integer, got {value!r}")
    return value


def loads_graph(text: str, source: Optional[str] = None) -> Graph:
    name = source or "<string>"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedGraphFile(f"{name}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    nodes = _require(doc, "nodes", name)
    raw_edges = _require(doc, "edges", name)
    if not isinstance(nodes, list) or not isinstance(raw_edges, list):
        raise MalformedGraphFile(f"{name}: 'nodes' and 'edges' must be arrays")
    node_ids = [_as_int(n, f"{name}: nodes[{i}]") for i, n in enumerate(nodes)]
    edges = []
    for i, e in enumerate(raw_edges):
        where = f"{name}: edges[{i}]"
        edges.append(Edge(_as_int(_require(e, "id", where), where + ".id"),
                          _as_int(_require(e, "u", where), where + ".u"),
                          _as_int(_require(e, "v", where), where + ".v")))
    start = _as_int(_require(doc, "start", name), f"{name}: start")
    end = _as_int(_require(doc, "end", name), f"{name}: end")
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise MalformedGraphFile(f"{name}: 'metadata' must be an object")
    g = Graph(node_ids, edges, start, end, metadata)
    try:
        g.validate()
    except ValueError as exc:
        raise MalformedGraphFile(f"{name}: {exc}") from exc
    return g


def load_graph(source) -> Graph:
    path = Path(source)
    return loads_graph(path.read_text(encoding="utf-8"), str(path))

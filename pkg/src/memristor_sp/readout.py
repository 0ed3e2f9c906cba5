"""Reading the answer out of a halted circuit.

The path is recovered greedily from the start node by following the most
conductive memristor at each step. The success metric is the smallest
margin by which an on-path memristor beats the off-path memristors sharing
its node; a positive margin guarantees the greedy readout is correct.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ReadoutOverlong, ReadoutStuck
from .graph import Graph, PathOracle
from .models import DeviceModel


@dataclass
class PathMetrics:
    delta_g: float
    delta_g_max: float
    normalized: float
    success: bool
    read_path: Optional[list]


def _conductance_by_edge(graph: Graph, device_x, model: DeviceModel) -> dict:
    """Map edge id -> small-signal conductance.

    ``device_x`` is either a dict keyed by edge id or an array in edge-id
    order (the order a Circuit stores it in).
    """
    edges = sorted(e.edge_id for e in graph.edges)
    if isinstance(device_x, dict):
        x = np.array([device_x[eid] for eid in edges], dtype=float)
    else:
        x = np.asarray(device_x, dtype=float)
    g = np.broadcast_to(model.conductance(x), x.shape)
    return dict(zip(edges, g.tolist()))


def read_path(graph: Graph, device_x, model: DeviceModel) -> list:
    """Follow the highest-conductance unvisited neighbour from start to end.

    Ties go to the lowest edge id.

    Raises:
        ReadoutStuck: every neighbour of the current node is already visited.
        ReadoutOverlong: more nodes visited than exist (cycle guard).
    """
    g = _conductance_by_edge(graph, device_x, model)
    adj = graph.adjacency
    path = [graph.start]
    visited = {graph.start}
    while path[-1] != graph.end:
        if len(path) > graph.node_count:
            raise ReadoutOverlong(f"readout exceeded {graph.node_count} nodes")
        best = None
        for eid, nb in adj[path[-1]]:
            if nb in visited:
                continue
            if best is None or g[eid] > best[0]:
                best = (g[eid], nb)
        if best is None:
            raise ReadoutStuck(f"no unvisited neighbour at node {path[-1]}")
        path.append(best[1])
        visited.add(best[1])
    return path


def compute_delta_g(graph: Graph, device_x, model: DeviceModel,
                    oracle: PathOracle) -> PathMetrics:
    """Smallest on-path minus off-path conductance margin along the oracle path."""
    g = _conductance_by_edge(graph, device_x, model)
    dg_max = model.delta_g_max
    path = oracle.path
    on_path = {graph.edge_between(a, b).edge_id for a, b in zip(path, path[1:])}
    adj = graph.adjacency
    margins = []
    for a, b in zip(path, path[1:]):
        g_next = g[graph.edge_between(a, b).edge_id]
        for eid, _ in adj[a]:
            if eid not in on_path:
                margins.append(g_next - g[eid])
    delta_g = min(margins) if margins else dg_max
    try:
        rp = read_path(graph, device_x, model)
    except (ReadoutStuck, ReadoutOverlong):
        rp = None
    return PathMetrics(float(delta_g), float(dg_max), float(delta_g / dg_max),
                       bool(delta_g > 0), rp)


def verify_against_oracle(metrics: PathMetrics, oracle: PathOracle) -> bool:
    return metrics.read_path is not None and list(metrics.read_path) == list(oracle.path)


@dataclass
class ResultRecord:
    """Outcome of one solve, as written by the ``solve`` command."""

    read_path: Optional[list]
    delta_g: float
    delta_g_max: float
    normalized: float
    success: bool
    detection_time_s: Optional[float]
    energy_J: float

    @classmethod
    def from_metrics(cls, m: PathMetrics, detection_time_s, energy_J) -> "ResultRecord":
        return cls(m.read_path, m.delta_g, m.delta_g_max, m.normalized, m.success,
                   detection_time_s, energy_J)

    def dumps(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    def save(self, destination) -> None:
        Path(destination).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, source) -> "ResultRecord":
        return cls(**json.loads(Path(source).read_text(encoding="utf-8")))

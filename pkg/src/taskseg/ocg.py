"""Origin-centric graph over the final part topology.

The origin is the part with maximal degree centrality ``deg / (N - 1)``
(ties go to the smallest id).  Every other part is weighted by
``1 / (1 + d)`` where ``d`` is its BFS hop distance from the origin; parts
in a different component get weight 0.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from typing import Mapping

from .errors import DegenerateGraph, DisconnectedAssemblyWarning, StrictConnectivity, UnknownNode
from .stsg import PartGraph, Recording, part_connectivity_at

#: Distance value for nodes outside the origin's component.
UNREACHABLE = None


@dataclass(frozen=True)
class OriginCentricGraph:
    origin: int
    centrality: dict[int, float]
    distance: dict[int, int | None]
    weight: dict[int, float]

    @property
    def nodes(self) -> list[int]:
        return sorted(self.weight)

    @property
    def connected(self) -> bool:
        return all(d is not UNREACHABLE for d in self.distance.values())

    def to_dict(self, rec: Recording | None = None) -> dict:
        out = []
        for n in self.nodes:
            entry = {"id": n}
            if rec is not None:
                entry["name"] = rec.nodes[n].name
            entry.update(
                centrality=self.centrality[n],
                distance=self.distance[n],
                weight=self.weight[n],
            )
            out.append(entry)
        return {"origin": self.origin, "connected": self.connected, "nodes": out}


def degree_centrality(g: PartGraph) -> dict[int, float]:
    n = len(g)
    if n < 2:
        raise DegenerateGraph(f"degree centrality needs at least 2 nodes, got {n}")
    denom = n - 1
    return {v: len(nbrs) / denom for v, nbrs in g.adj.items()}


def select_origin(centrality: Mapping[int, float]) -> int:
    if not centrality:
        raise DegenerateGraph("no nodes to choose an origin from")
    # max over (value, -id) picks the smallest id among equal maxima
    return max(centrality, key=lambda v: (centrality[v], -v))


def shortest_distances(g: PartGraph, origin: int) -> dict[int, int | None]:
    if origin not in g.adj:
        raise UnknownNode(f"origin {origin} is not a node of the graph")
    dist: dict[int, int | None] = dict.fromkeys(g.adj, UNREACHABLE)
    dist[origin] = 0
    queue = deque([origin])
    while queue:
        v = queue.popleft()
        step = dist[v] + 1
        for w in g.adj[v]:
            if dist[w] is UNREACHABLE:
                dist[w] = step
                queue.append(w)
    return dist


def origin_weights(distances: Mapping[int, int | None]) -> dict[int, float]:
    return {v: 0.0 if d is UNREACHABLE else 1.0 / (1 + d) for v, d in distances.items()}


def ocg_from_graph(g: PartGraph, strict_connected: bool = False) -> OriginCentricGraph:
    centrality = degree_centrality(g)
    origin = select_origin(centrality)
    distance = shortest_distances(g, origin)
    weight = origin_weights(distance)
    unreachable = [v for v, d in distance.items() if d is UNREACHABLE]
    if unreachable:
        msg = f"final part graph is disconnected: {len(unreachable)} part(s) unreachable from origin {origin}"
        if strict_connected:
            raise StrictConnectivity(msg)
        warnings.warn(msg, DisconnectedAssemblyWarning, stacklevel=3)
    return OriginCentricGraph(origin, centrality, distance, weight)


def build_ocg(
    rec: Recording, final_frame: int | None = None, strict_connected: bool = False
) -> OriginCentricGraph:
    """OCG from the part graph at ``final_frame`` (default: last frame)."""
    if not rec.frames:
        raise DegenerateGraph("recording has no frames")
    if len(rec.part_ids) < 2:
        raise DegenerateGraph(f"need at least 2 parts, recording has {len(rec.part_ids)}")
    frame = len(rec.frames) - 1 if final_frame is None else final_frame
    g = part_connectivity_at(rec, frame)
    return ocg_from_graph(g, strict_connected)

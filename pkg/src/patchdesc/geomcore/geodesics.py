"""Graph geodesics: Dijkstra over mesh edges with Euclidean lengths.

An approximation of true polyhedral geodesics, but consistent, cheap and
sufficient for error-curve evaluation.
"""

import heapq
import logging

import numpy as np

logger = logging.getLogger(__name__)


def build_adjacency(mesh):
    """Adjacency lists [(neighbor, edge_length), ...] per vertex."""
    edges = mesh.edges()
    lengths = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]],
                             axis=1)
    adj = [[] for _ in range(mesh.n_vertices)]
    for (i, j), w in zip(edges, lengths):
        adj[i].append((int(j), float(w)))
        adj[j].append((int(i), float(w)))
    return adj


def geodesic_distances(mesh, source, adjacency=None):
    """Distance from `source` to every vertex along the edge graph.

    Unreachable vertices get +inf (logged).
    """
    if adjacency is None:
        adjacency = build_adjacency(mesh)
    n = len(adjacency)
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    n_unreachable = int(np.isinf(dist).sum())
    if n_unreachable:
        logger.warning("geodesic_distances: %d vertices unreachable from %d",
                       n_unreachable, source)
    return dist

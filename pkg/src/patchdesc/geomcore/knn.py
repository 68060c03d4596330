"""Exact k-nearest-neighbor queries.

A small kd-tree with lexicographic (distance, index) ordering, so equal
distances always resolve to the lower point index.  `knn_graph` switches to
a vectorized full-distance-matrix scan for small inputs, where it is much
faster than per-query tree descent; both routes implement the same exact
contract.
"""

import heapq

import numpy as np

from ..errors import ConfigurationError

_LEAF_SIZE = 16
_BRUTE_FORCE_MAX = 2048


class KdTree:
    """Static kd-tree over an (N,d) point array."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ConfigurationError("KdTree needs a non-empty (N,d) array")
        self._nodes = []
        indices = np.arange(len(self.points))
        self._root = self._build(indices)

    def _build(self, indices):
        pts = self.points[indices]
        if len(indices) <= _LEAF_SIZE:
            self._nodes.append(("leaf", indices, None, None, None))
            return len(self._nodes) - 1
        spans = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spans))
        order = np.argsort(pts[:, axis], kind="stable")
        mid = len(order) // 2
        split_value = pts[order[mid], axis]
        left = self._build(indices[order[:mid]])
        right = self._build(indices[order[mid:]])
        self._nodes.append(("split", None, axis, split_value, (left, right)))
        return len(self._nodes) - 1

    def query_knn(self, query, k, exclude=-1):
        """k nearest neighbors of `query`, ascending (distance, index)."""
        if k < 1 or k > len(self.points) - (1 if exclude >= 0 else 0):
            raise ConfigurationError(
                f"k={k} out of range for {len(self.points)} points"
            )
        query = np.asarray(query, dtype=np.float64)
        # heap of (-d2, -idx): root is the current worst candidate
        heap = []
        self._search(self._root, query, k, exclude, heap)
        best = sorted((-negd2, -negidx) for negd2, negidx in heap)
        return np.array([idx for _, idx in best], dtype=np.int64)

    def _search(self, node_id, query, k, exclude, heap):
        kind, indices, axis, split_value, children = self._nodes[node_id]
        if kind == "leaf":
            pts = self.points[indices]
            d2 = np.einsum("ij,ij->i", pts - query, pts - query)
            for dist2, idx in zip(d2, indices):
                if idx == exclude:
                    continue
                item = (-dist2, -idx)
                if len(heap) < k:
                    heapq.heappush(heap, item)
                elif item > heap[0]:
                    heapq.heapreplace(heap, item)
            return
        left, right = children
        diff = query[axis] - split_value
        near, far = (left, right) if diff < 0 else (right, left)
        self._search(near, query, k, exclude, heap)
        # the far side may still hold equal-distance lower-index candidates
        if len(heap) < k or diff * diff <= -heap[0][0]:
            self._search(far, query, k, exclude, heap)


def knn(points, query_index, k):
    """Indices of the k nearest neighbors of points[query_index], self
    excluded, ordered by ascending distance with ties to the lower index."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k >= n:
        raise ConfigurationError(f"k={k} must be < point count {n}")
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    tree = KdTree(points)
    return tree.query_knn(points[query_index], k, exclude=query_index)


def knn_graph(points, k, return_dist=False):
    """(N,k) neighbor indices for every point, self excluded.

    Same ordering contract as `knn`.  Small inputs use a full distance
    matrix; larger ones a shared kd-tree.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k >= n:
        raise ConfigurationError(f"k={k} must be < point count {n}")
    if n <= _BRUTE_FORCE_MAX:
        idx = np.empty((n, k), dtype=np.int64)
        # direct differences (not the expanded-dot identity) so distances are
        # bitwise identical to the kd-tree route, keeping tie order exact
        chunk = max(1, (1 << 22) // max(n, 1))
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            diff = points[None, :, :] - points[start:stop, None, :]
            d2 = np.einsum("rnj,rnj->rn", diff, diff)
            d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
            # stable sort keeps lower indices first on exact ties
            order = np.argsort(d2, axis=1, kind="stable")
            idx[start:stop] = order[:, :k]
    else:
        tree = KdTree(points)
        idx = np.empty((n, k), dtype=np.int64)
        for i in range(n):
            idx[i] = tree.query_knn(points[i], k, exclude=i)
    if return_dist:
        diffs = points[idx] - points[:, None, :]
        return idx, np.sqrt(np.einsum("nkj,nkj->nk", diffs, diffs))
    return idx

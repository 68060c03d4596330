"""Point-cloud normal estimation from local covariance."""

import numpy as np

from ..errors import ConfigurationError
from .knn import knn_graph

_RANK_TOL = 1e-10


def estimate_normals(points, k):
    """Per-point unit normals: smallest-variance axis of the k-neighborhood.

    Normals are flipped to have a non-negative z component (height-field
    convention).  Degenerate neighborhoods (rank < 2) fall back to +z.
    Returns (normals, fallback_count).
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 3:
        raise ConfigurationError(f"normal estimation needs k >= 3, got {k}")
    idx = knn_graph(points, k)
    neigh = np.concatenate([points[:, None, :], points[idx]], axis=1)  # self + k
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neigh.shape[1]
    evals, evecs = np.linalg.eigh(cov)  # ascending per point

    normals = evecs[:, :, 0].copy()
    degenerate = evals[:, 1] <= _RANK_TOL * np.maximum(evals[:, 2], 1e-300)
    degenerate |= evals[:, 2] <= 0
    normals[degenerate] = np.array([0.0, 0.0, 1.0])
    flip = normals[:, 2] < 0
    normals[flip] = -normals[flip]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, int(degenerate.sum())

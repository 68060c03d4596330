"""Canonical rigid alignment of point patches.

The frame comes from the eigendecomposition of the point covariance,
largest-variance axis first.  Axis signs are fixed deterministically:
flip so the third central moment along the axis is non-negative; if that
moment is below 1e-9, flip so the coordinate of the point farthest from
the centroid is non-negative; finally force det=+1 by flipping the last
axis.  The same surface therefore lands in the same pose no matter how
it was rigidly moved, up to residual flips on moment-degenerate patches.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DegenerateInputError
from ..patchgen import PatchCloud
from .knn import knn

_MOMENT_TOL = 1e-9


@dataclass
class Rotation3:
    """Proper rotation matrix (det +1, orthonormal to 1e-10)."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (3, 3):
            raise ConfigurationError(f"rotation must be 3x3, got {self.matrix.shape}")
        if np.max(np.abs(self.matrix.T @ self.matrix - np.eye(3))) > 1e-10:
            raise ConfigurationError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(self.matrix) - 1.0) > 1e-10:
            raise ConfigurationError("rotation matrix must have det +1")


def canonical_align_points(points):
    """Align a raw (N,3) array; returns (aligned, Rotation3, centroid).

    aligned = (points - centroid) @ R.matrix, columns ordered by
    decreasing variance.
    """
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    if np.trace(cov) <= 1e-24:
        raise DegenerateInputError("all patch points coincide; no alignment frame")
    evals, evecs = np.linalg.eigh(cov)  # ascending
    axes = evecs[:, ::-1].copy()        # descending variance

    far = int(np.argmax(np.einsum("ij,ij->i", centered, centered)))
    for a in range(3):
        coords = centered @ axes[:, a]
        moment = np.mean(coords**3)
        if abs(moment) >= _MOMENT_TOL:
            if moment < 0:
                axes[:, a] = -axes[:, a]
        elif coords[far] < 0:
            axes[:, a] = -axes[:, a]
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]

    return centered @ axes, Rotation3(axes), centroid


def canonical_align(patch):
    """Align a PatchCloud; returns (aligned PatchCloud, Rotation3, centroid)."""
    aligned, rot, centroid = canonical_align_points(patch.points)
    out = PatchCloud(points=aligned, origin_index=None,
                     domain_radius=patch.domain_radius, source_id=patch.source_id)
    return out, rot, centroid


def extract_vertex_patch(points, vertex_index, k=64):
    """Local patch around one point: itself plus its k nearest neighbors,
    translated so the center point sits at the origin."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) <= k:
        raise ConfigurationError(
            f"need more than k={k} points to extract a patch, got {len(points)}"
        )
    neighbors = knn(points, vertex_index, k)
    center = points[vertex_index]
    local = np.concatenate([[center], points[neighbors]], axis=0) - center
    radius = float(np.max(np.linalg.norm(local, axis=1)))
    if radius <= 0:
        raise DegenerateInputError("vertex neighborhood has zero extent")
    return PatchCloud(points=local, origin_index=0, domain_radius=radius)

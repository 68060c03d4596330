"""Spatial differential operators on point clouds.

Per-point tangent frames come from local covariance; a weighted
least-squares affine fit over each point's neighborhood yields a sparse
gradient operator G mapping scalar fields to per-point tangent 2-vectors.
Divergence reuses the same fit coefficients on the component fields
(DIV[i, (j,c)] = G[(i,c), j]), which keeps it exact on affine vector
fields pointwise; an adjoint divergence -G^T is only weakly consistent
and oscillates at interior points on scattered samplings.  Curl is the
divergence of the 90-degree-rotated field.  The scalar Hodge Laplacian
uses the adjoint composition L = -G^T G, symmetric negative semidefinite
by construction and exactly annihilating constants.

Tangent vector fields are stored interleaved: rows 2i and 2i+1 hold the
e1 and e2 components at point i.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, ShapeError
from .geomcore.knn import knn_graph

_RANK_TOL = 1e-10
_COND_LIMIT = 1e10
_RIDGE = 1e-8


@dataclass
class TangentFrames:
    """Right-handed orthonormal frame (e1, e2, normal) per point."""

    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    fallback_count: int = 0


@dataclass
class OperatorSet:
    """Sparse gradient/divergence/curl/Laplacian for one point cloud."""

    gradient: sparse.csr_matrix    # (2N, N)
    divergence: sparse.csr_matrix  # (N, 2N)
    curl: sparse.csr_matrix        # (N, 2N)
    laplacian: sparse.csr_matrix   # (N, N)
    rot90: sparse.csr_matrix       # (2N, 2N), per-point 90-degree rotation
    k: int
    n_points: int
    regularized_count: int = 0

    def _check_scalar(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.n_points:
            raise ShapeError(f"scalar field has {u.shape[0]} entries, expected {self.n_points}")
        return u

    def _check_vector(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim >= 2 and v.shape[0] == self.n_points and v.shape[1] == 2:
            # (N, 2, ...) row-major flattens to the interleaved layout
            v = v.reshape(2 * self.n_points, *v.shape[2:])
        if v.shape[0] != 2 * self.n_points:
            raise ShapeError(
                f"vector field has {v.shape[0]} rows, expected {2 * self.n_points} "
                f"(interleaved) or ({self.n_points}, 2)"
            )
        return v

    def grad(self, u):
        """Scalar field -> (N, 2) tangent vectors."""
        return (self.gradient @ self._check_scalar(u)).reshape(self.n_points, 2)

    def div(self, v):
        return self.divergence @ self._check_vector(v)

    def curl_of(self, v):
        return self.curl @ self._check_vector(v)

    def laplacian_scalar(self, u):
        return self.laplacian @ self._check_scalar(u)

    def vector_laplacian(self, v):
        """grad(div v) - J grad(curl v), returned as (N, 2)."""
        v = self._check_vector(v)
        out = self.gradient @ (self.divergence @ v) - self.rot90 @ (
            self.gradient @ (self.curl @ v))
        return out.reshape(self.n_points, 2)


def build_tangent_frames(points, k=20):
    """Covariance-based frames: normal is the least-variance axis oriented
    toward +z; e1 is the tangent projection of global +x (+y if parallel);
    e2 = n x e1.  Degenerate neighborhoods fall back to the global axes."""
    points = np.asarray(points, dtype=np.float64)
    if k < 6:
        raise ConfigurationError(f"frame estimation needs k >= 6, got {k}")
    n = len(points)
    idx = knn_graph(points, min(k, n - 1))
    neigh = np.concatenate([points[:, None, :], points[idx]], axis=1)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neigh.shape[1]
    evals, evecs = np.linalg.eigh(cov)

    normal = evecs[:, :, 0].copy()
    degenerate = (evals[:, 1] <= _RANK_TOL * np.maximum(evals[:, 2], 1e-300)) | (evals[:, 2] <= 0)
    flip = normal[:, 2] < 0
    normal[flip] = -normal[flip]

    xhat = np.array([1.0, 0.0, 0.0])
    yhat = np.array([0.0, 1.0, 0.0])
    e1 = xhat - normal * normal[:, 0:1]
    weak = np.linalg.norm(e1, axis=1) < 1e-6
    e1[weak] = yhat - normal[weak] * normal[weak, 1:2]
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normal, e1)

    if degenerate.any():
        e1[degenerate] = xhat
        e2[degenerate] = yhat
        normal[degenerate] = np.array([0.0, 0.0, 1.0])
    return TangentFrames(e1=e1, e2=e2, normal=normal,
                         fallback_count=int(degenerate.sum()))


def build_gradient(points, frames, k=20):
    """Weighted least-squares gradient operator G (sparse 2N x N).

    Per point: fit u ~ c + g . (xi, eta) over itself and its k nearest
    neighbors in tangent-plane coordinates, Gaussian weights with
    bandwidth equal to the mean neighbor distance.  Ill-conditioned
    normal matrices (cond > 1e10) get a ridge of 1e-8 * trace on the
    slope block, which keeps constants annihilated exactly.
    Returns (G, regularized_count).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(k, n - 1)
    idx, dist = knn_graph(points, k, return_dist=True)

    rel = points[idx] - points[:, None, :]             # (n, k, 3)
    xi = np.einsum("nkj,nj->nk", rel, frames.e1)
    eta = np.einsum("nkj,nj->nk", rel, frames.e2)
    h = np.maximum(dist.mean(axis=1, keepdims=True), 1e-12)
    w = np.exp(-0.5 * (dist / h) ** 2)

    m = k + 1  # self plus neighbors
    design = np.zeros((n, m, 3))
    design[:, 0, 0] = 1.0
    design[:, 1:, 0] = 1.0
    design[:, 1:, 1] = xi
    design[:, 1:, 2] = eta
    weights = np.concatenate([np.ones((n, 1)), w], axis=1)

    aw = design.transpose(0, 2, 1) * weights[:, None, :]   # (n, 3, m)
    normal_mat = aw @ design                                # (n, 3, 3)

    cond = np.linalg.cond(normal_mat)
    bad = ~np.isfinite(cond) | (cond > _COND_LIMIT)
    if bad.any():
        ridge = _RIDGE * np.trace(normal_mat[bad], axis1=1, axis2=2)
        normal_mat[bad, 1, 1] += ridge
        normal_mat[bad, 2, 2] += ridge
    coeffs = np.linalg.solve(normal_mat, aw)                # (n, 3, m)

    cols = np.concatenate([np.arange(n)[:, None], idx], axis=1)  # (n, m)
    rows_e1 = np.repeat(2 * np.arange(n), m)
    rows_e2 = rows_e1 + 1
    grad = sparse.coo_matrix(
        (np.concatenate([coeffs[:, 1, :].ravel(), coeffs[:, 2, :].ravel()]),
         (np.concatenate([rows_e1, rows_e2]), np.tile(cols.ravel(), 2))),
        shape=(2 * n, n),
    ).tocsr()
    return grad, int(bad.sum())


def assemble_operators(points, frames, gradient, k=20, regularized_count=0):
    """Bundle G with the component-fit DIV, CURL = DIV J, and L = -G^T G."""
    n = len(points)
    if gradient.shape != (2 * n, n):
        raise ShapeError(f"gradient has shape {gradient.shape}, expected {(2 * n, n)}")
    coo = gradient.tocoo()
    # same fit coefficients, reindexed to differentiate component fields
    divergence = sparse.coo_matrix(
        (coo.data, (coo.row // 2, 2 * coo.col + coo.row % 2)),
        shape=(n, 2 * n),
    ).tocsr()
    # J rotates each tangent 2-vector by -90 degrees: (xi, eta) -> (eta, -xi),
    # the convention under which curl = div(J v) carries the standard sign and
    # the vector Laplacian is grad div - J grad curl
    even = 2 * np.arange(n)
    rot90 = sparse.coo_matrix(
        (np.concatenate([np.ones(n), -np.ones(n)]),
         (np.concatenate([even, even + 1]), np.concatenate([even + 1, even]))),
        shape=(2 * n, 2 * n),
    ).tocsr()
    curl = (divergence @ rot90).tocsr()
    laplacian = (-(gradient.T @ gradient)).tocsr()
    return OperatorSet(gradient=gradient, divergence=divergence, curl=curl,
                       laplacian=laplacian, rot90=rot90, k=k, n_points=n,
                       regularized_count=regularized_count)


def build_operators(points, k=20):
    """Frames + gradient + assembled operator set in one call."""
    frames = build_tangent_frames(points, k=k)
    grad, n_reg = build_gradient(points, frames, k=k)
    ops = assemble_operators(points, frames, grad, k=k, regularized_count=n_reg)
    return ops, frames

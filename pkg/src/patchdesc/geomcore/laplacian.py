"""Cotangent-weight stiffness matrix and lumped (barycentric) mass."""

import numpy as np
from scipy import sparse

from ..errors import TopologyError
from .mesh import face_areas

_COT_CLAMP = 1e4


def cotan_laplacian(mesh):
    """Stiffness S (sparse, symmetric PSD) and lumped mass M (diagonal).

    S_ij = -(cot a_ij + cot b_ij)/2 on edge ij (one term on boundary
    edges), S_ii = -sum_j S_ij.  M_ii is one third of the area of the
    triangles incident to i.  Cotangents are clamped to +-1e4 to tame
    near-degenerate triangles.  Edges shared by more than two faces raise
    a topology error naming the edge.
    """
    v = mesh.vertices
    f = mesh.faces
    n = len(v)

    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    uniq, counts = np.unique(und, axis=0, return_counts=True)
    bad = counts > 2
    if np.any(bad):
        i, j = uniq[np.argmax(bad)]
        raise TopologyError(f"non-manifold edge ({i}, {j}) shared by {counts.max()} faces")

    # cotangent at each corner, opposite the edge formed by the other two
    cots = np.empty((len(f), 3))
    for corner in range(3):
        a = v[f[:, (corner + 1) % 3]] - v[f[:, corner]]
        b = v[f[:, (corner + 2) % 3]] - v[f[:, corner]]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        dot = np.einsum("ij,ij->i", a, b)
        cots[:, corner] = dot / np.maximum(cross, 1e-300)
    np.clip(cots, -_COT_CLAMP, _COT_CLAMP, out=cots)

    # edge opposite corner 0 is (1,2), corner 1 -> (2,0), corner 2 -> (0,1)
    rows = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    cols = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])

    off = sparse.coo_matrix(
        (np.concatenate([-w, -w]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    stiffness = (off + sparse.diags(diag)).tocsr()

    areas = face_areas(mesh)
    mass = np.zeros(n)
    for corner in range(3):
        np.add.at(mass, f[:, corner], areas / 3.0)
    return stiffness, sparse.diags(mass).tocsr()

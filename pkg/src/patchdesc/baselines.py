"""Classical local descriptors: HKS, WKS, SHOT-lite, plus PCA utilities.

HKS/WKS are spectral signatures evaluated from Laplacian eigenpairs; for
polynomial patches the mesh comes from Delaunay triangulation of the
(x, y) projection and the descriptor is read at the origin vertex.
SHOT-lite is a reduced SHOT: one 11-bin histogram of normal-angle
cosines per octant of a covariance-based local reference frame (8 x 11 =
88 dims), L2-normalized.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, ShapeError
from .geomcore.delaunay import patch_to_mesh
from .geomcore.normals import estimate_normals
from .geomcore.spectral import spectral_basis

_EIG_TOL = 1e-8


@dataclass
class DescriptorField:
    """Uniform-width descriptor rows plus bookkeeping about how they were made."""

    values: np.ndarray       # (N, width)
    kind: str
    params: dict

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError(f"{self.kind} descriptors contain non-finite entries")

    @property
    def width(self):
        return self.values.shape[1]


def _positive_eigenvalues(basis):
    lam = basis.eigenvalues
    cutoff = _EIG_TOL * max(lam[-1], 1e-300)
    keep = lam > cutoff
    return lam[keep], basis.eigenfunctions[:, keep]


def hks(basis, vertex, times):
    """Heat kernel signature: sum_i exp(-lambda_i t) phi_i(x)^2 per time."""
    if basis.k == 0:
        raise ConfigurationError("empty spectral basis")
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or len(times) == 0 or np.any(times <= 0):
        raise ConfigurationError("times must be a non-empty positive vector")
    phi2 = basis.eigenfunctions[vertex] ** 2
    return np.exp(-np.outer(times, basis.eigenvalues)) @ phi2


def hks_default_times(basis, count=16):
    """Log-spaced times spanning [4 ln10 / lambda_max, 4 ln10 / lambda_2]."""
    lam, _ = _positive_eigenvalues(basis)
    if len(lam) < 2:
        raise ConfigurationError("need at least 2 positive eigenvalues for default times")
    return np.geomspace(4 * np.log(10) / lam[-1], 4 * np.log(10) / lam[0], count)


def wks(basis, vertex, energies, sigma):
    """Wave kernel signature with per-energy normalized Gaussian weights.

    Non-positive eigenvalues are skipped; weights for energy e are
    exp(-(e - log lambda_i)^2 / (2 sigma^2)) normalized to sum 1.
    """
    if sigma <= 0:
        raise ConfigurationError("wks sigma must be positive")
    lam, phi = _positive_eigenvalues(basis)
    if len(lam) == 0:
        raise ConfigurationError("no positive eigenvalues for WKS")
    energies = np.asarray(energies, dtype=np.float64)
    weights = np.exp(-((energies[:, None] - np.log(lam)[None, :]) ** 2)
                     / (2.0 * sigma**2))
    denom = weights.sum(axis=1)
    # a genuinely empty band cannot happen for finite energies, but guard the division
    return (weights @ (phi[vertex] ** 2)) / np.maximum(denom, 1e-300)


def wks_default_params(basis, count=32):
    """Energies uniform on [log l2, log lK] padded inward by 2 sigma,
    sigma = 7 x the raw energy spacing."""
    lam, _ = _positive_eigenvalues(basis)
    if len(lam) < 2:
        raise ConfigurationError("need at least 2 positive eigenvalues for WKS defaults")
    e_min, e_max = np.log(lam[0]), np.log(lam[-1])
    sigma = 7.0 * (e_max - e_min) / count
    energies = np.linspace(e_min + 2 * sigma, e_max - 2 * sigma, count)
    return energies, sigma


def shot_lite(points, normals, center_index, radius, spatial_bins=8, angle_bins=11):
    """Reduced SHOT descriptor at one point (8 octants x 11 cosine bins).

    The local reference frame comes from the covariance (about the center)
    of in-radius points, sign-disambiguated so the majority of neighbors
    lie on each positive half-axis.
    """
    if spatial_bins != 8:
        raise ConfigurationError("shot_lite uses exactly 8 octants")
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    if points.shape != normals.shape:
        raise ShapeError(f"points {points.shape} and normals {normals.shape} differ")
    rel = points - points[center_index]
    dist = np.linalg.norm(rel, axis=1)
    mask = (dist > 0) & (dist <= radius)
    if mask.sum() < 10:
        raise DegenerateInputError(
            f"shot_lite needs >= 10 in-radius neighbors, found {int(mask.sum())}")
    nbr = rel[mask]

    cov = nbr.T @ nbr / len(nbr)
    _, evecs = np.linalg.eigh(cov)  # ascending: [z-ish, y-ish, x-ish]
    x_axis, z_axis = evecs[:, 2], evecs[:, 0]
    if np.sum(nbr @ x_axis >= 0) < len(nbr) / 2.0:
        x_axis = -x_axis
    if np.sum(nbr @ z_axis >= 0) < len(nbr) / 2.0:
        z_axis = -z_axis
    y_axis = np.cross(z_axis, x_axis)

    local = nbr @ np.column_stack([x_axis, y_axis, z_axis])
    octant = ((local[:, 0] < 0).astype(int)
              + 2 * (local[:, 1] < 0).astype(int)
              + 4 * (local[:, 2] < 0).astype(int))
    cos = np.clip(normals[mask] @ normals[center_index], -1.0, 1.0)
    cbin = np.minimum(((cos + 1.0) / 2.0 * angle_bins).astype(int), angle_bins - 1)

    hist = np.zeros((8, angle_bins))
    np.add.at(hist, (octant, cbin), 1.0)
    flat = hist.ravel()
    norm = np.linalg.norm(flat)
    return flat / norm if norm > 0 else flat


def descriptor_pca(descriptors, out_dim=2):
    """Mean-centered projection onto the top principal axes.

    Returns (projected (N, out_dim), explained-variance ratios).
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"descriptor set must be 2D, got {X.shape}")
    if len(X) < out_dim + 1:
        raise ConfigurationError(
            f"PCA needs at least {out_dim + 1} samples, got {len(X)}")
    centered = X - X.mean(axis=0)
    total_var = np.sum(centered**2)
    if total_var <= 0:
        raise DegenerateInputError("descriptor set has zero variance")
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:out_dim]
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(out_dim), lead])
    comps = comps * signs[:, None]
    projected = centered @ comps.T
    ratios = (svals[:out_dim] ** 2) / np.sum(svals**2)
    return projected, ratios


def silhouette_score(X, labels):
    """Mean silhouette over samples, euclidean metric; singleton clusters
    score 0."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ConfigurationError("silhouette needs at least 2 clusters")
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    n = len(X)
    scores = np.zeros(n)
    members = {c: np.flatnonzero(labels == c) for c in uniq}
    for i in range(n):
        own = members[labels[i]]
        if len(own) == 1:
            continue
        a = dist[i, own].sum() / (len(own) - 1)
        b = min(dist[i, members[c]].mean() for c in uniq if c != labels[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def patch_spectral_basis(patch, k=64):
    """Delaunay mesh + Laplacian eigenpairs of a height-field patch.

    Returns (basis, origin_vertex_in_mesh).
    """
    if patch.origin_index is None:
        raise ConfigurationError("patch has no origin point for descriptor evaluation")
    mesh, kept = patch_to_mesh(patch)
    where = np.flatnonzero(kept == patch.origin_index)
    if len(where) == 0:
        raise DegenerateInputError("origin vertex was merged away during triangulation")
    k_eff = min(k, mesh.n_vertices - 2)
    return spectral_basis(mesh, k_eff), int(where[0])


def patch_hks(patch, k=64, count=16):
    basis, origin = patch_spectral_basis(patch, k=k)
    times = hks_default_times(basis, count=count)
    return DescriptorField(values=hks(basis, origin, times), kind="hks",
                           params={"times": times.tolist(), "k": basis.k})


def patch_wks(patch, k=64, count=32):
    basis, origin = patch_spectral_basis(patch, k=k)
    energies, sigma = wks_default_params(basis, count=count)
    return DescriptorField(values=wks(basis, origin, energies, sigma), kind="wks",
                           params={"energies": energies.tolist(), "sigma": sigma,
                                   "k": basis.k})


def patch_shot(patch, k_normals=16, radius=None):
    if patch.origin_index is None:
        raise ConfigurationError("patch has no origin point for descriptor evaluation")
    normals, _ = estimate_normals(patch.points, k=k_normals)
    radius = radius if radius is not None else patch.domain_radius
    values = shot_lite(patch.points, normals, patch.origin_index, radius)
    return DescriptorField(values=values, kind="shot",
                           params={"radius": radius, "k_normals": k_normals})


def save_descriptors_csv(path, field, labels=None):
    """One row per point: optional label column then descriptor entries."""
    with open(path, "w") as fh:
        width = field.values.shape[1]
        header = (["label"] if labels is not None else []) + \
            [f"{field.kind}_{i}" for i in range(width)]
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(field.values):
            prefix = [str(labels[i])] if labels is not None else []
            fh.write(",".join(prefix + [f"{v:.9g}" for v in row]) + "\n")

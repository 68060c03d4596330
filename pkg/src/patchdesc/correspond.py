"""Dense descriptors, nearest-neighbor matching, functional maps, ZoomOut
refinement, and geodesic-error evaluation."""

from dataclasses import dataclass

import numpy as np

from .baselines import DescriptorField
from .errors import ConfigurationError, DatasetIOError, ShapeError, TopologyError
from .geomcore.geodesics import build_adjacency, geodesic_distances
from .geomcore.knn import knn_graph
from .geomcore.mesh import mesh_area
from .neuralnet.encoder import encode_patches
from .neuralnet.simsiam import cosine_matrix

DEFAULT_THRESHOLDS = np.round(np.arange(0, 101) * 0.0025, 6)  # 0 .. 0.25


@dataclass
class PointMap:
    """For every vertex of shape A, the matched vertex index on shape B."""

    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1:
            raise ShapeError("point map must be a flat index vector")
        if len(self.indices) and self.indices.min() < 0:
            raise ConfigurationError("point map contains negative indices")

    def __len__(self):
        return len(self.indices)


@dataclass
class FunctionalMap:
    """k_B x k_A matrix mapping spectral coefficients from A to B."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError("functional map must be a matrix")
        if not np.all(np.isfinite(self.matrix)):
            raise ConfigurationError("functional map contains non-finite entries")


@dataclass
class ErrorCurve:
    thresholds: np.ndarray
    fractions: np.ndarray
    mean_error: float

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        if np.any(np.diff(self.fractions) < 0):
            raise ConfigurationError("error-curve fractions must be non-decreasing")


def dense_descriptors(mesh_or_points, encoder, k=64, batch_size=96):
    """Per-vertex descriptors: local K-NN patch -> align -> encode."""
    points = (mesh_or_points.vertices if hasattr(mesh_or_points, "vertices")
              else np.asarray(mesh_or_points, dtype=np.float64))
    n = len(points)
    if n <= k:
        raise ConfigurationError(f"need more than k={k} vertices, got {n}")
    neighbors = knn_graph(points, k)
    patches = [
        np.concatenate([points[v:v + 1], points[neighbors[v]]], axis=0) - points[v]
        for v in range(n)
    ]
    values = encode_patches(patches, encoder, auto_align=True, batch_size=batch_size)
    return DescriptorField(values=values, kind="neural",
                           params={"k": k, "d_out": encoder.d_out})


def nn_match(feat_a, feat_b, metric="cosine"):
    """Per-A-row best match among B rows; ties go to the lower index."""
    a = np.asarray(feat_a, dtype=np.float64)
    b = np.asarray(feat_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature widths differ: {a.shape} vs {b.shape}")
    if metric == "cosine":
        sim = cosine_matrix(a, b)
        return PointMap(indices=sim.argmax(axis=1))
    if metric == "euclidean":
        indices = np.empty(len(a), dtype=np.int64)
        chunk = max(1, (1 << 22) // max(len(b), 1))
        for lo in range(0, len(a), chunk):
            diff = a[lo:lo + chunk, None, :] - b[None, :, :]
            d2 = np.einsum("rnj,rnj->rn", diff, diff)
            indices[lo:lo + chunk] = d2.argmin(axis=1)
        return PointMap(indices=indices)
    raise ConfigurationError(f"unknown metric {metric!r}")


def pointmap_to_fmap(basis_a, basis_b, point_map, k):
    """Spectral transport of the point map: C = Phi_B^T M_B Pi Phi_A.

    Exact least squares in the M_B inner product because the basis is
    M-orthonormal.
    """
    if k < 1 or k > basis_a.k or k > basis_b.k:
        raise ConfigurationError(
            f"k={k} exceeds available eigenpairs ({basis_a.k}, {basis_b.k})")
    t = point_map.indices
    if t.max() >= basis_b.eigenfunctions.shape[0]:
        raise ConfigurationError("point map targets exceed shape B vertex count")
    phi_a = basis_a.eigenfunctions[:, :k]
    phi_b_mapped = basis_b.eigenfunctions[t, :k]
    weights = basis_b.lumped_mass[t]
    return FunctionalMap(matrix=(weights[:, None] * phi_b_mapped).T @ phi_a)


def _spectral_nn(emb_a, emb_b):
    indices = np.empty(len(emb_a), dtype=np.int64)
    chunk = max(1, (1 << 22) // max(len(emb_b), 1))
    for lo in range(0, len(emb_a), chunk):
        diff = emb_a[lo:lo + chunk, None, :] - emb_b[None, :, :]
        d2 = np.einsum("rnj,rnj->rn", diff, diff)
        indices[lo:lo + chunk] = d2.argmin(axis=1)
    return indices


def zoomout(basis_a, basis_b, init_map, k0=10, step=5, k_max=None):
    """ZoomOut refinement: alternate map->functional-map conversion and
    spectral nearest neighbors while growing the spectral dimension."""
    if k_max is None:
        k_max = min(100, basis_a.k, basis_b.k)
    if k0 >= k_max:
        raise ConfigurationError(f"need k0 < k_max, got k0={k0}, k_max={k_max}")
    if k_max > basis_a.k or k_max > basis_b.k:
        raise ConfigurationError(
            f"k_max={k_max} exceeds available eigenpairs ({basis_a.k}, {basis_b.k})")
    current = PointMap(indices=init_map.indices.copy())
    ks = list(range(k0, k_max + 1, step))
    if ks[-1] != k_max:
        ks.append(k_max)
    for k in ks:
        fmap = pointmap_to_fmap(basis_a, basis_b, current, k)
        emb_a = basis_a.eigenfunctions[:, :k] @ fmap.matrix.T
        emb_b = basis_b.eigenfunctions[:, :k]
        current = PointMap(indices=_spectral_nn(emb_a, emb_b))
    return current


def geodesic_error_curve(point_map, gt_map, mesh_b, thresholds=None):
    """Per-vertex geodesic error on B between matched and true vertices,
    normalized by sqrt(area(B)); returns the cumulative curve."""
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if len(point_map) != len(gt_map):
        raise ShapeError(
            f"maps cover {len(point_map)} vs {len(gt_map)} vertices")
    adjacency = build_adjacency(mesh_b)
    scale = 1.0 / np.sqrt(mesh_area(mesh_b))
    errors = np.empty(len(point_map))
    for source in np.unique(gt_map.indices):
        dist = geodesic_distances(mesh_b, int(source), adjacency=adjacency)
        rows = np.flatnonzero(gt_map.indices == source)
        errors[rows] = dist[point_map.indices[rows]] * scale
    if not np.all(np.isfinite(errors)):
        raise TopologyError("mesh B is disconnected; geodesic errors undefined")
    fractions = np.mean(errors[None, :] <= thresholds[:, None], axis=1)
    return ErrorCurve(thresholds=thresholds, fractions=fractions,
                      mean_error=float(errors.mean()))


def write_pointmap(path, point_map):
    """Plain text, one 0-based target index per line."""
    with open(path, "w") as fh:
        for idx in point_map.indices:
            fh.write(f"{idx}\n")


def read_pointmap(path):
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        indices = np.array([int(ln) for ln in lines], dtype=np.int64)
    except OSError as exc:
        raise DatasetIOError(f"cannot read point map {path}: {exc}") from exc
    except ValueError as exc:
        raise DatasetIOError(f"malformed point map {path}: {exc}") from exc
    return PointMap(indices=indices)


def write_error_curve_csv(path, curve):
    with open(path, "w") as fh:
        fh.write("threshold,fraction\n")
        for t, f in zip(curve.thresholds, curve.fractions):
            fh.write(f"{t:.6g},{f:.9g}\n")

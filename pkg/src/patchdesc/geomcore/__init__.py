"""Point-cloud and mesh geometry primitives."""

from .align import Rotation3, canonical_align, canonical_align_points, extract_vertex_patch
from .delaunay import delaunay_2d, patch_to_mesh
from .geodesics import build_adjacency, geodesic_distances
from .knn import KdTree, knn, knn_graph
from .laplacian import cotan_laplacian
from .mesh import (TriMesh, face_areas, icosphere, mesh_area, normalize_mesh,
                   read_mesh, read_off, read_ply, write_off)
from .normals import estimate_normals
from .spectral import SpectralBasis, eigendecompose, spectral_basis

__all__ = [
    "Rotation3", "canonical_align", "canonical_align_points", "extract_vertex_patch",
    "delaunay_2d", "patch_to_mesh", "build_adjacency", "geodesic_distances",
    "KdTree", "knn", "knn_graph", "cotan_laplacian",
    "TriMesh", "face_areas", "icosphere", "mesh_area", "normalize_mesh",
    "read_mesh", "read_off", "read_ply", "write_off",
    "estimate_normals", "SpectralBasis", "eigendecompose", "spectral_basis",
]

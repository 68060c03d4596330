import numpy as np
import pytest

from patchdesc import correspond as cor
from patchdesc import geomcore as gc
from patchdesc import patchgen as pg
from patchdesc.errors import ConfigurationError, ShapeError, TopologyError
from conftest import random_rotation


def small_mesh(rng, n=120):
    poly = pg.sample_polynomial(rng, (2, 3), 1.0)
    patch = pg.sample_patch(poly, n, 1.0, rng)
    mesh, _ = gc.patch_to_mesh(patch)
    return mesh


class TestNnMatch:
    def test_identity(self, rng):
        feats = rng.normal(size=(40, 8))
        assert np.array_equal(cor.nn_match(feats, feats).indices, np.arange(40))
        assert np.array_equal(cor.nn_match(feats, feats, "euclidean").indices,
                              np.arange(40))

    def test_permutation_recovered(self, rng):
        feats = rng.normal(size=(30, 6))
        perm = rng.permutation(30)
        got = cor.nn_match(feats, feats[perm]).indices
        assert np.array_equal(perm[got], np.arange(30))

    def test_matches_brute_force(self, rng):
        a = rng.normal(size=(100, 5))
        b = rng.normal(size=(120, 5))
        got_cos = cor.nn_match(a, b, "cosine").indices
        got_euc = cor.nn_match(a, b, "euclidean").indices
        an = a / np.linalg.norm(a, axis=1, keepdims=True)
        bn = b / np.linalg.norm(b, axis=1, keepdims=True)
        for i in range(100):
            assert got_cos[i] == int(np.argmax(bn @ an[i]))
            assert got_euc[i] == int(np.argmin(
                np.linalg.norm(b - a[i], axis=1)))

    def test_width_mismatch(self, rng):
        with pytest.raises(ShapeError):
            cor.nn_match(rng.normal(size=(5, 3)), rng.normal(size=(5, 4)))


class TestPointmapToFmap:
    def test_identity_transport(self, rng):
        mesh = small_mesh(rng)
        basis = gc.spectral_basis(mesh, 20)
        pmap = cor.PointMap(indices=np.arange(mesh.n_vertices))
        fmap = cor.pointmap_to_fmap(basis, basis, pmap, k=12)
        assert np.max(np.abs(np.abs(fmap.matrix) - np.eye(12))) < 1e-6

    def test_constant_mode_transport(self, rng):
        mesh = small_mesh(rng)
        basis_a = gc.spectral_basis(mesh, 12)
        moved = gc.TriMesh(vertices=mesh.vertices @ random_rotation(rng).T + 2.0,
                           faces=mesh.faces)
        basis_b = gc.spectral_basis(moved, 12)
        pmap = cor.PointMap(indices=np.arange(mesh.n_vertices))
        fmap = cor.pointmap_to_fmap(basis_a, basis_b, pmap, k=8)
        first = np.abs(fmap.matrix[0])
        assert first[0] == pytest.approx(1.0, abs=1e-4)
        assert np.max(first[1:]) < 1e-4
        assert np.max(np.abs(fmap.matrix[1:, 0])) < 1e-4

    def test_matches_dense_lstsq_oracle(self, rng):
        mesh = small_mesh(rng, n=80)
        basis = gc.spectral_basis(mesh, 14)
        pmap = cor.PointMap(indices=rng.integers(0, mesh.n_vertices,
                                                 mesh.n_vertices))
        k = 10
        fmap = cor.pointmap_to_fmap(basis, basis, pmap, k=k)
        # dense weighted least squares: min ||Phi_B C - Pi Phi_A||_{M_B}
        phi = basis.eigenfunctions[:, :k]
        m = basis.lumped_mass
        pi_phi_a = np.zeros_like(phi)
        np.add.at(pi_phi_a, pmap.indices, phi)
        w = np.sqrt(m)[:, None]
        want, *_ = np.linalg.lstsq(w * phi, w * pi_phi_a, rcond=None)
        assert np.allclose(fmap.matrix, want, atol=1e-8)

    def test_k_too_large(self, rng):
        mesh = small_mesh(rng, n=60)
        basis = gc.spectral_basis(mesh, 8)
        pmap = cor.PointMap(indices=np.arange(mesh.n_vertices))
        with pytest.raises(ConfigurationError):
            cor.pointmap_to_fmap(basis, basis, pmap, k=9)


class TestZoomout:
    def test_identity_fixed_point(self, rng):
        mesh = small_mesh(rng)
        basis = gc.spectral_basis(mesh, 40)
        init = cor.PointMap(indices=np.arange(mesh.n_vertices))
        out = cor.zoomout(basis, basis, init, k0=8, step=4, k_max=32)
        assert np.array_equal(out.indices, init.indices)

    def test_isometric_pair_fixed_point(self, rng):
        mesh = small_mesh(rng)
        basis_a = gc.spectral_basis(mesh, 40)
        moved = gc.TriMesh(vertices=mesh.vertices @ random_rotation(rng).T + 1.5,
                           faces=mesh.faces)
        basis_b = gc.spectral_basis(moved, 40)
        init = cor.PointMap(indices=np.arange(mesh.n_vertices))
        out = cor.zoomout(basis_a, basis_b, init, k0=8, step=4, k_max=32)
        assert np.mean(out.indices == init.indices) > 0.95

    def test_corrupted_init_improves(self, rng):
        mesh = small_mesh(rng, n=140)
        basis = gc.spectral_basis(mesh, 48)
        n = mesh.n_vertices
        gt = cor.PointMap(indices=np.arange(n))
        bad = np.arange(n)
        corrupt = rng.choice(n, size=n // 10, replace=False)
        bad[corrupt] = rng.integers(0, n, size=len(corrupt))
        init = cor.PointMap(indices=bad)
        refined = cor.zoomout(basis, basis, init, k0=10, step=5, k_max=40)
        before = cor.geodesic_error_curve(init, gt, mesh).mean_error
        after = cor.geodesic_error_curve(refined, gt, mesh).mean_error
        assert after < before

    def test_k0_must_be_less_than_kmax(self, rng):
        mesh = small_mesh(rng, n=60)
        basis = gc.spectral_basis(mesh, 12)
        init = cor.PointMap(indices=np.arange(mesh.n_vertices))
        with pytest.raises(ConfigurationError):
            cor.zoomout(basis, basis, init, k0=10, step=5, k_max=10)


def floyd_warshall(mesh):
    n = mesh.n_vertices
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for i, j in mesh.edges():
        w = np.linalg.norm(mesh.vertices[i] - mesh.vertices[j])
        d[i, j] = d[j, i] = w
    for k in range(n):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    return d


class TestErrorCurve:
    def test_perfect_map(self, rng):
        mesh = small_mesh(rng, n=60)
        gt = cor.PointMap(indices=rng.integers(0, mesh.n_vertices,
                                               mesh.n_vertices))
        curve = cor.geodesic_error_curve(gt, gt, mesh)
        assert curve.mean_error == 0.0
        assert np.all(curve.fractions == 1.0)

    def test_single_wrong_vertex(self, rng):
        mesh = small_mesh(rng, n=60)
        n = mesh.n_vertices
        gt = cor.PointMap(indices=np.arange(n))
        wrong = np.arange(n)
        wrong[7] = (7 + n // 2) % n
        curve = cor.geodesic_error_curve(cor.PointMap(indices=wrong), gt, mesh,
                                         thresholds=[0.0, 10.0])
        assert curve.fractions[0] == pytest.approx((n - 1) / n)
        assert curve.fractions[1] == 1.0

    def test_matches_floyd_warshall_oracle(self, rng):
        mesh = small_mesh(rng, n=100)
        n = mesh.n_vertices
        gt = cor.PointMap(indices=rng.integers(0, n, n))
        pred = cor.PointMap(indices=rng.integers(0, n, n))
        curve = cor.geodesic_error_curve(pred, gt, mesh)
        oracle = floyd_warshall(mesh)
        scale = 1.0 / np.sqrt(gc.mesh_area(mesh))
        want = np.array([oracle[gt.indices[v], pred.indices[v]] * scale
                         for v in range(n)])
        assert curve.mean_error == pytest.approx(want.mean(), rel=1e-10)

    def test_monotone(self, rng):
        mesh = small_mesh(rng, n=80)
        n = mesh.n_vertices
        curve = cor.geodesic_error_curve(
            cor.PointMap(indices=rng.integers(0, n, n)),
            cor.PointMap(indices=rng.integers(0, n, n)), mesh)
        assert np.all(np.diff(curve.fractions) >= 0)

    def test_disconnected_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                          [5, 5, 5], [6, 5, 5], [5, 6, 5]], dtype=float)
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        mesh = gc.TriMesh(vertices=verts, faces=faces)
        gt = cor.PointMap(indices=np.array([0, 1, 2, 3, 4, 5]))
        pred = cor.PointMap(indices=np.array([3, 1, 2, 0, 4, 5]))
        with pytest.raises(TopologyError):
            cor.geodesic_error_curve(pred, gt, mesh)


class TestIO:
    def test_pointmap_round_trip(self, rng, tmp_path):
        pmap = cor.PointMap(indices=rng.integers(0, 500, 200))
        path = tmp_path / "map.txt"
        cor.write_pointmap(path, pmap)
        back = cor.read_pointmap(path)
        assert np.array_equal(back.indices, pmap.indices)

    def test_error_curve_csv(self, rng, tmp_path):
        curve = cor.ErrorCurve(thresholds=np.array([0.0, 0.1, 0.2]),
                               fractions=np.array([0.1, 0.5, 1.0]),
                               mean_error=0.12)
        path = tmp_path / "curve.csv"
        cor.write_error_curve_csv(path, curve)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "threshold,fraction"
        assert len(lines) == 4

"""Generalized eigendecomposition S phi = lambda M phi for mesh spectra."""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from ..errors import ConfigurationError, NumericalError

_DENSE_CUTOFF = 400


@dataclass
class SpectralBasis:
    """Ascending eigenpairs of the Laplacian plus the lumped mass.

    eigenfunctions holds one eigenvector per column, M-orthonormal.
    """

    eigenvalues: np.ndarray   # (k,)
    eigenfunctions: np.ndarray  # (V, k)
    lumped_mass: np.ndarray   # (V,)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        self.eigenfunctions = np.asarray(self.eigenfunctions, dtype=np.float64)
        self.lumped_mass = np.asarray(self.lumped_mass, dtype=np.float64)
        if np.any(np.diff(self.eigenvalues) < 0):
            raise NumericalError("eigenvalues must be ascending")

    @property
    def k(self):
        return len(self.eigenvalues)


def eigendecompose(stiffness, mass, k):
    """k smallest generalized eigenpairs, M-orthonormal, residual-checked.

    Deterministic: ARPACK is started from a fixed vector and eigenvector
    signs are fixed by making the largest-magnitude entry positive.
    """
    n = stiffness.shape[0]
    if k < 1 or k > n:
        raise ConfigurationError(f"k={k} out of range for {n} vertices")
    m_diag = np.asarray(mass.diagonal()).ravel()
    if np.any(m_diag <= 0):
        raise NumericalError("mass matrix must be positive (isolated vertex?)")

    if n <= _DENSE_CUTOFF or k > n - 2:
        evals, evecs = eigh(stiffness.toarray(), mass.toarray(),
                            subset_by_index=[0, k - 1])
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        try:
            evals, evecs = eigsh(stiffness, k=k, M=mass, sigma=-1e-2,
                                 which="LM", v0=v0)
        except (ArpackError, ArpackNoConvergence) as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc

    order = np.argsort(evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]

    # exact M-normalization and a deterministic sign convention
    norms = np.sqrt(np.einsum("vk,v,vk->k", evecs, m_diag, evecs))
    evecs = evecs / norms
    lead = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[lead, np.arange(k)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs

    resid = stiffness @ evecs - (m_diag[:, None] * evecs) * evals
    resid_norm = np.linalg.norm(resid, axis=0)
    ref = np.linalg.norm(stiffness @ evecs, axis=0)
    # near-null pairs have |S phi| ~ 0, so give the relative test an
    # absolute floor tied to the stiffness scale
    s_scale = np.max(np.abs(stiffness.diagonal())) if n else 1.0
    floor = 1e-7 * max(s_scale, 1e-300) * np.linalg.norm(evecs, axis=0)
    rel = resid_norm / np.maximum(ref, floor)
    if np.any(rel > 1e-6):
        raise NumericalError(
            f"eigenpair residual {rel.max():.3e} exceeds 1e-6 (pair {int(np.argmax(rel))})"
        )
    return SpectralBasis(eigenvalues=evals, eigenfunctions=evecs, lumped_mass=m_diag)


def spectral_basis(mesh, k):
    """Convenience: cotangent Laplacian + eigendecomposition of a mesh."""
    from .laplacian import cotan_laplacian

    stiffness, mass = cotan_laplacian(mesh)
    return eigendecompose(stiffness, mass, k)

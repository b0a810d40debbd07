"""Laplace-Beltrami eigenbases and the positional encodings built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .mesh import TriMesh


class TooManyModes(ValueError):
    pass


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """``N`` eigenpairs of ``A v = lam M v`` with ascending eigenvalues.

    ``vectors[:, k]`` is the k-th eigenvector sampled at the vertices, so
    row ``i`` is the encoding of vertex ``i``. ``mass`` is ``None`` for
    closed-form bases that were sampled rather than solved.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    mass: sparse.spmatrix | None = None

    @property
    def n_modes(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vectors.shape[0]

    def head(self, n_modes: int) -> "EigenBasis":
        """Basis restricted to its first ``n_modes`` eigenpairs."""
        if not 0 < n_modes <= self.n_modes:
            raise TooManyModes(f"basis has {self.n_modes} modes, asked for {n_modes}")
        return EigenBasis(self.eigenvalues[:n_modes], self.vectors[:, :n_modes], self.mass)

    def residuals(self, A) -> np.ndarray:
        """Relative residuals ``|A v - lam M v| / |A v|`` (NaN where ``A v`` vanishes)."""
        if self.mass is None:
            raise ValueError("basis carries no mass matrix")
        Av = A @ self.vectors
        r = np.linalg.norm(Av - (self.mass @ self.vectors) * self.eigenvalues, axis=0)
        scale = np.linalg.norm(Av, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(scale > 0, r / scale, np.nan)


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    pick = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pick, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def solve_eigen(A, M, n_modes: int, tol: float = 1e-12, seed: int = 0, dense_below: int = 1600) -> EigenBasis:
    """Smallest ``n_modes`` generalized eigenpairs of the stiffness/mass pencil.

    Small problems go through a dense symmetric-definite solver; larger ones
    use shift-invert Lanczos (ARPACK) around ``-sigma`` with
    ``sigma = 1e-8 trace(M) / n``, so the factorized ``A + sigma M`` is
    definite despite the constant null mode. The Lanczos start vector is
    drawn from ``seed``.
    """
    A = sparse.csr_matrix(A)
    M = sparse.csr_matrix(M)
    n = A.shape[0]
    if n_modes >= n:
        raise TooManyModes(f"{n_modes} modes requested on {n} vertices")
    if n_modes < 1:
        raise ValueError("n_modes must be positive")
    if n <= dense_below:
        lam, vec = scipy.linalg.eigh(A.toarray(), M.toarray(), subset_by_index=[0, n_modes - 1])
    else:
        sigma = 1e-8 * M.diagonal().sum() / n
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            lam, vec = eigsh(A, k=n_modes, M=M, sigma=-sigma, which="LM", v0=v0, tol=tol)
        except ArpackNoConvergence as err:
            raise EigenSolverError(f"eigensolver did not converge: {err}") from None
    order = np.argsort(lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    # M-normalize explicitly; ARPACK returns unit M-norm only up to its tolerance
    vec = vec / np.sqrt(np.einsum("ik,ik->k", vec, M @ vec))
    if abs(lam[0]) <= 1e-8 * max(abs(lam[-1]), 1.0):
        lam[0] = max(lam[0], 0.0)
    vec = _canonical_signs(vec)
    vec.flags.writeable = False
    lam.flags.writeable = False
    return EigenBasis(lam, vec, M)


def laplace_beltrami_basis(mesh: TriMesh, n_modes: int, seed: int = 0, **solver) -> EigenBasis:
    """Assemble the consistent FEM pencil on ``mesh`` and solve for ``n_modes`` pairs."""
    from .fem import assemble_mass, assemble_stiffness

    return solve_eigen(assemble_stiffness(mesh), assemble_mass(mesh), n_modes, seed=seed, **solver)


def encode_vertex(basis: EigenBasis, i: int) -> np.ndarray:
    if not 0 <= i < basis.n_vertices:
        raise IndexError(f"vertex {i} out of range")
    return np.array(basis.vectors[i])


def encode_point(basis: EigenBasis, mesh: TriMesh, t: int, barycentric) -> np.ndarray:
    """Linear interpolation of the vertex encodings of triangle ``t``."""
    w = np.asarray(barycentric, dtype=np.float64)
    if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("barycentric weights must be three nonnegative numbers summing to 1")
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle {t} out of range")
    return w @ basis.vectors[mesh.triangles[t]]


def centroid_encodings(basis: EigenBasis, mesh: TriMesh) -> np.ndarray:
    return basis.vectors[mesh.triangles].mean(axis=1)


def eigenfunction_gradients(basis: EigenBasis, mesh: TriMesh) -> np.ndarray:
    """(m, d, N) per-element gradients of every eigenfunction."""
    from .fem import element_gradients

    return np.einsum("mdk,mkn->mdn", element_gradients(mesh), basis.vectors[mesh.triangles])


class AnalyticSquareBasis:
    """Neumann eigenfunctions ``cos(pi l x / 2) cos(pi m y / 2)`` of [-1, 1]^2.

    Indices run over ``l, m = 1..sqrt(N)``; modes are ordered by eigenvalue
    ``(pi/2)^2 (l^2 + m^2)``, ties broken by ``(l, m)``.
    """

    def __init__(self, n_modes: int):
        k = math.isqrt(n_modes)
        if k < 1 or k * k != n_modes:
            raise ValueError(f"n_modes must be a perfect square, got {n_modes}")
        lm = [(l, m) for l in range(1, k + 1) for m in range(1, k + 1)]
        lm.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
        self.modes = np.array(lm, dtype=np.int64)
        self.eigenvalues = (math.pi / 2) ** 2 * (self.modes ** 2).sum(axis=1).astype(np.float64)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        kx = np.cos(0.5 * math.pi * p[:, :1] * self.modes[:, 0])
        ky = np.cos(0.5 * math.pi * p[:, 1:2] * self.modes[:, 1])
        return kx * ky

    def laplacian(self, points) -> np.ndarray:
        return -self.eigenvalues * self(points)

    def on_mesh(self, mesh: TriMesh) -> EigenBasis:
        return EigenBasis(self.eigenvalues.copy(), self(mesh.vertices[:, :2]))


def analytic_square_basis(n_modes: int) -> AnalyticSquareBasis:
    return AnalyticSquareBasis(n_modes)

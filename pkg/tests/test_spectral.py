import math

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from dpinn import fem, spectral
from dpinn import mesh as M

Q = (math.pi / 2) ** 2


def square_eigenvalues(k):
    """k smallest Neumann eigenvalues of [-1, 1]^2, including zero and 1-D modes."""
    vals = sorted(Q * (l * l + m * m) for l in range(12) for m in range(12))
    return np.array(vals[:k])


@pytest.fixture(scope="module")
def basis_05():
    m, _ = M.generate_square(0.05)
    return m, spectral.laplace_beltrami_basis(m, 10)


@pytest.fixture(scope="module")
def coil_basis(coil):
    return spectral.laplace_beltrami_basis(coil, 50)


def test_square_spectrum_pattern(basis_05):
    _, b = basis_05
    exact = square_eigenvalues(10)
    assert b.eigenvalues[0] < 1e-8 * b.eigenvalues[1]
    np.testing.assert_allclose(b.eigenvalues[1:], exact[1:], rtol=0.01)
    np.testing.assert_allclose(exact[1:6] / Q, [1, 1, 2, 4, 4])


def test_first_mode_is_constant(basis_05):
    m, b = basis_05
    v = b.vectors[:, 0]
    np.testing.assert_allclose(np.abs(v), 1 / math.sqrt(m.total_area), rtol=1e-8)


def test_m_orthonormal(coil_basis):
    G = coil_basis.vectors.T @ (coil_basis.mass @ coil_basis.vectors)
    assert np.abs(G - np.eye(coil_basis.n_modes)).max() < 1e-8


def test_coil_residuals(coil, coil_basis):
    assert coil_basis.n_modes == 50
    r = coil_basis.residuals(fem.assemble_stiffness(coil))
    assert np.all(r[1:] <= 1e-8)
    assert np.all(np.diff(coil_basis.eigenvalues) >= 0)


def test_sparse_solver_agrees_with_dense(sphere):
    A, Mm = fem.assemble_stiffness(sphere), fem.assemble_mass(sphere)
    dense = spectral.solve_eigen(A, Mm, 12)
    sparse = spectral.solve_eigen(A, Mm, 12, dense_below=0)
    np.testing.assert_allclose(sparse.eigenvalues[1:], dense.eigenvalues[1:], rtol=1e-9)
    # degenerate eigenspaces (l = 1: 3 modes, l = 2: 5 modes) compared by subspace angles
    for lo, hi in [(1, 4), (4, 9)]:
        ang = subspace_angles(dense.vectors[:, lo:hi], sparse.vectors[:, lo:hi])
        assert ang.max() < 1e-6


def test_sparse_solver_deterministic(sphere):
    A, Mm = fem.assemble_stiffness(sphere), fem.assemble_mass(sphere)
    a = spectral.solve_eigen(A, Mm, 8, dense_below=0, seed=3)
    b = spectral.solve_eigen(A, Mm, 8, dense_below=0, seed=3)
    assert np.array_equal(a.vectors, b.vectors)


def test_sign_convention(coil_basis):
    V = coil_basis.vectors
    pick = np.argmax(np.abs(V), axis=0)
    assert np.all(V[pick, np.arange(V.shape[1])] > 0)


def test_too_many_modes():
    m, _ = M.generate_square(1.0)
    with pytest.raises(spectral.TooManyModes):
        spectral.laplace_beltrami_basis(m, m.n_vertices)


def test_head_limits(coil_basis):
    assert coil_basis.head(10).n_modes == 10
    with pytest.raises(spectral.TooManyModes):
        coil_basis.head(51)


def test_eigenvalue_convergence_rate():
    errs = []
    for h in (0.2, 0.1, 0.05):
        m, _ = M.generate_square(h)
        lam = spectral.laplace_beltrami_basis(m, 10).eigenvalues
        errs.append(np.abs(lam[1:] - square_eigenvalues(10)[1:]).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.7)


def test_encode_vertex(coil_basis):
    small = coil_basis.head(3)
    np.testing.assert_array_equal(spectral.encode_vertex(small, 0), small.vectors[0])
    with pytest.raises(IndexError):
        spectral.encode_vertex(small, small.n_vertices)


def test_encoding_lipschitz(coil, coil_basis):
    grads = spectral.eigenfunction_gradients(coil_basis, coil)
    gmax = np.abs(grads).max(axis=(0, 1))
    e = coil.edges
    length = np.linalg.norm(coil.vertices[e[:, 0]] - coil.vertices[e[:, 1]], axis=1)
    diff = np.abs(coil_basis.vectors[e[:, 0]] - coil_basis.vectors[e[:, 1]])
    # per-mode bound: |v_k(a) - v_k(b)| <= |a - b| sqrt(d) max |grad v_k|
    assert np.all(diff <= length[:, None] * math.sqrt(3) * gmax[None, :] + 1e-12)


def test_encode_point(coil, coil_basis):
    t = 17
    corners = coil_basis.vectors[coil.triangles[t]]
    np.testing.assert_allclose(spectral.encode_point(coil_basis, coil, t, [1, 0, 0]), corners[0])
    np.testing.assert_allclose(spectral.encode_point(coil_basis, coil, t, [1 / 3] * 3), corners.mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(spectral.centroid_encodings(coil_basis, coil)[t], corners.mean(axis=0), atol=1e-15)


def test_encode_point_constant_mode(coil, coil_basis, rng):
    for _ in range(10):
        w = rng.dirichlet(np.ones(3))
        w[-1] = 1.0 - w[:2].sum()
        enc = spectral.encode_point(coil_basis, coil, 5, w)
        assert abs(enc[0] - coil_basis.vectors[0, 0]) < 1e-12


@pytest.mark.parametrize("w", [[0.5, 0.6, -0.1], [0.2, 0.2, 0.2], [1.0, 0.0]])
def test_encode_point_rejects_weights(coil, coil_basis, w):
    with pytest.raises(ValueError):
        spectral.encode_point(coil_basis, coil, 0, w)


def test_projection_error_decreases(square_02):
    m = square_02[0]
    b = spectral.laplace_beltrami_basis(m, 60)
    x, y = m.vertices.T
    u = np.exp(-((x - 0.3) ** 2 + y**2))
    Mm = b.mass
    errs = []
    for n in (5, 10, 20, 40, 60):
        V = b.vectors[:, :n]
        r = u - V @ (V.T @ (Mm @ u))
        errs.append(r @ (Mm @ r))
    assert np.all(np.diff(errs) <= 1e-14)


def test_analytic_modes():
    b = spectral.AnalyticSquareBasis(9)
    assert {tuple(p) for p in b.modes} == {(l, m) for l in (1, 2, 3) for m in (1, 2, 3)}
    assert np.all(np.diff(b.eigenvalues) >= 0)


def test_analytic_values():
    b = spectral.AnalyticSquareBasis(1)
    assert b([[0.0, 0.0]])[0, 0] == 1.0
    assert abs(b([[1.0, 1.0]])[0, 0]) < 1e-15


def test_analytic_laplacian_by_finite_differences(rng):
    b = spectral.AnalyticSquareBasis(16)
    k = int(np.flatnonzero((b.modes == [2, 3]).all(axis=1))[0])
    assert abs(b.eigenvalues[k] - Q * 13) < 1e-12
    p = rng.uniform(-0.9, 0.9, size=(20, 2))
    s = 1e-4
    fd = sum(b(p + d)[:, k] + b(p - d)[:, k] for d in ([s, 0], [0, s])) - 4 * b(p)[:, k]
    np.testing.assert_allclose(fd / s**2, b.laplacian(p)[:, k], atol=1e-5)


def test_analytic_rejects_non_square():
    with pytest.raises(ValueError):
        spectral.AnalyticSquareBasis(10)


def test_analytic_on_mesh(square_02):
    b = spectral.AnalyticSquareBasis(25).on_mesh(square_02[0])
    assert b.vectors.shape == (square_02[0].n_vertices, 25)
    assert b.mass is None

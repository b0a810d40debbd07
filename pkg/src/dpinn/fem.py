"""Linear finite element operators on triangle meshes.

Stiffness ``A`` discretizes ``-Δ`` with natural (zero-flux) boundaries, so
``A @ 1 == 0``; the mass matrix ``M`` is the L2 Gram matrix of the hat
functions. Both are returned as ``scipy.sparse.csr_matrix``.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .mesh import TriMesh

# local (row, col) pattern of a 3x3 element matrix
_ROWS = np.repeat(np.arange(3), 3)
_COLS = np.tile(np.arange(3), 3)


def _opposite_edges(mesh: TriMesh) -> np.ndarray:
    """(m, 3, d) edge vectors opposite each local vertex, oriented counter-clockwise."""
    p = mesh.vertices[mesh.triangles]
    return np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)


def _assemble(mesh: TriMesh, local: np.ndarray) -> sparse.csr_matrix:
    t = mesh.triangles
    rows = t[:, _ROWS].ravel()
    cols = t[:, _COLS].ravel()
    n = mesh.n_vertices
    # coo -> csr sums duplicates in a fixed order, so assembly is reproducible
    return sparse.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def local_stiffness(mesh: TriMesh) -> np.ndarray:
    """(m, 3, 3) cotangent element matrices ``e_i . e_j / (4 area)``."""
    e = _opposite_edges(mesh)
    return np.einsum("mik,mjk->mij", e, e) / (4.0 * mesh.areas)[:, None, None]


def assemble_stiffness(mesh: TriMesh) -> sparse.csr_matrix:
    return _assemble(mesh, local_stiffness(mesh))


_CONSISTENT = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: TriMesh, lumped: bool = False) -> sparse.csr_matrix:
    """Consistent mass ``area/12 [[2,1,1],[1,2,1],[1,1,2]]`` or its row-sum lumping."""
    if lumped:
        w = np.zeros(mesh.n_vertices)
        np.add.at(w, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
        return sparse.diags(w).tocsr()
    return _assemble(mesh, mesh.areas[:, None, None] * _CONSISTENT)


def lumped_laplacian(mesh: TriMesh) -> sparse.csr_matrix:
    """Pointwise discrete ``-Δ``: stiffness rows divided by the lumped vertex mass."""
    m = assemble_mass(mesh, lumped=True).diagonal()
    return sparse.diags(1.0 / m) @ assemble_stiffness(mesh)


def boundary_mass(mesh: TriMesh, edges: np.ndarray) -> sparse.csr_matrix:
    """Consistent 1-D mass ``len/6 [[2,1],[1,2]]`` over the given boundary edges."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = mesh.n_vertices
    if len(edges) == 0:
        return sparse.csr_matrix((n, n))
    length = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    local = length[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    rows = edges[:, [0, 0, 1, 1]].ravel()
    cols = edges[:, [0, 1, 0, 1]].ravel()
    return sparse.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def element_gradients(mesh: TriMesh) -> np.ndarray:
    """(m, d, 3) matrices ``B`` mapping the three nodal values to the element gradient.

    In 3-D the hat-function gradients are ``n x e_i / (2 area)``, which lie
    in the triangle plane by construction.
    """
    e = _opposite_edges(mesh)
    if mesh.dimension == 2:
        two_a = (e[:, 2, 0] * -e[:, 1, 1] - e[:, 2, 1] * -e[:, 1, 0])
        rot = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        grads = rot / two_a[:, None, None]
    else:
        n = mesh.normals
        grads = np.cross(n[:, None, :], e) / (2.0 * mesh.areas)[:, None, None]
    return np.ascontiguousarray(grads.transpose(0, 2, 1))


def element_gradient_matrix(mesh: TriMesh, t: int) -> np.ndarray:
    """Gradient operator ``B`` (d x 3) of triangle ``t``."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle {t} out of range")
    return element_gradients(mesh)[t]


def gradient_operator(mesh: TriMesh) -> sparse.csr_matrix:
    """Sparse ``(m*d, n)`` operator stacking all element gradients."""
    B = element_gradients(mesh)
    m, d, _ = B.shape
    rows = np.repeat(np.arange(m * d), 3)
    cols = np.repeat(mesh.triangles, d, axis=0).ravel()
    return sparse.csr_matrix((B.reshape(-1), (rows, cols)), shape=(m * d, mesh.n_vertices))


def nodal_laplacian(A: sparse.csr_matrix, field, i: int) -> float:
    """``sum_j A_ij field_j`` over the stored neighbours of vertex ``i``."""
    field = np.asarray(field)
    if field.shape[0] != A.shape[0]:
        raise ValueError("field length does not match the operator")
    if not 0 <= i < A.shape[0]:
        raise IndexError(f"vertex {i} out of range")
    lo, hi = A.indptr[i], A.indptr[i + 1]
    return float(A.data[lo:hi] @ field[A.indices[lo:hi]])


def padded_rows(A: sparse.csr_matrix, rows) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour indices and weights of the given rows, padded to equal width.

    Padding repeats the row's own index with weight zero, so gathers stay in
    range.
    """
    rows = np.asarray(rows, dtype=np.int64)
    A = sparse.csr_matrix(A)
    width = int(np.diff(A.indptr)[rows].max()) if len(rows) else 0
    idx = np.repeat(rows[:, None], width, axis=1)
    w = np.zeros((len(rows), width))
    for k, r in enumerate(rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        idx[k, : hi - lo] = A.indices[lo:hi]
        w[k, : hi - lo] = A.data[lo:hi]
    return idx, w


def boundary_normals(mesh: TriMesh, vertices) -> np.ndarray:
    """Outward unit normals at boundary vertices, averaged over incident boundary edges.

    The normal lies in the plane of the adjacent triangle (in-plane for 3-D
    surfaces with borders).
    """
    vertices = np.asarray(vertices, dtype=np.int64)
    be = mesh.boundary_edges
    et = mesh.edge_triangles[mesh._edge_counts == 1, 0]
    p, q = mesh.vertices[be[:, 0]], mesh.vertices[be[:, 1]]
    tangent = q - p
    c = mesh.centroids[et]
    if mesh.dimension == 2:
        nrm = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    else:
        nrm = np.cross(tangent, mesh.normals[et])
    flip = np.einsum("ij,ij->i", nrm, 0.5 * (p + q) - c) < 0
    nrm[flip] *= -1
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    out = np.zeros((mesh.n_vertices, mesh.dimension))
    np.add.at(out, be[:, 0], nrm)
    np.add.at(out, be[:, 1], nrm)
    out = out[vertices]
    norm = np.linalg.norm(out, axis=1)
    if np.any(norm == 0):
        raise ValueError("vertex not on the boundary")
    return out / norm[:, None]


def normal_derivative_operator(mesh: TriMesh, vertices) -> sparse.csr_matrix:
    """Rows mapping nodal values to ``grad u . n`` at boundary vertices.

    The gradient at a vertex is the mean of ``B`` over its incident elements.
    """
    vertices = np.asarray(vertices, dtype=np.int64)
    bset = set(np.unique(mesh.boundary_edges).tolist())
    if any(int(v) not in bset for v in vertices):
        raise ValueError("vertex not on the boundary")
    normals = boundary_normals(mesh, vertices)
    B = element_gradients(mesh)
    rows, cols, vals = [], [], []
    for k, v in enumerate(vertices):
        tris = mesh.vertex_triangles[v]
        coeff = np.einsum("d,tdj->tj", normals[k], B[tris]) / len(tris)
        rows.append(np.full(coeff.size, k))
        cols.append(mesh.triangles[tris].ravel())
        vals.append(coeff.ravel())
    op = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(vertices), mesh.n_vertices),
    )
    return op.tocsr()

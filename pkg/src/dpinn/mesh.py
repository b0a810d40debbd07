"""Triangle meshes: containers, generators, OFF/OBJ readers and boundary queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull

AREA_TOL = 1e-12


class MeshError(ValueError):
    """Base class for invalid mesh input."""


class MeshParseError(MeshError):
    pass


class NonTriangleFace(MeshError):
    pass


class DegenerateTriangle(MeshError):
    pass


class DisconnectedMesh(MeshError):
    pass


class NonManifoldEdge(MeshError):
    pass


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    e1, e2 = p1 - p0, p2 - p0
    if vertices.shape[1] == 2:
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangle mesh in 2-D or 3-D.

    Parameters
    ----------
    vertices : (n, d) array_like
        Vertex coordinates, ``d`` in {2, 3}.
    triangles : (m, 3) array_like
        Zero-based vertex indices of each triangle.

    The constructor validates index range, non-degeneracy (area > 1e-12),
    edge manifoldness (no edge shared by more than two triangles) and
    connectivity. Arrays are stored read-only.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        t = np.array(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError(f"vertices must have shape (n, 2) or (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise NonTriangleFace(f"triangles must have shape (m, 3), got {t.shape}")
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        areas = _triangle_areas(v, t)
        bad = np.flatnonzero(areas <= AREA_TOL)
        if bad.size:
            raise DegenerateTriangle(f"{bad.size} triangle(s) with area <= {AREA_TOL}, first {bad[0]}")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if np.any(self._edge_counts > 2):
            raise NonManifoldEdge("edge shared by more than two triangles")
        used = np.zeros(len(v), dtype=bool)
        used[t.ravel()] = True
        if not used.all():
            raise DisconnectedMesh(f"{np.count_nonzero(~used)} isolated vertices")
        ncomp, _ = connected_components(self.adjacency, directed=False)
        if ncomp != 1:
            raise DisconnectedMesh(f"mesh has {ncomp} connected components")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @cached_property
    def _half_edges(self):
        t = self.triangles
        he = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        key = np.sort(he, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.ravel(), counts

    @property
    def _edge_counts(self) -> np.ndarray:
        return self._half_edges[2]

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs, shape (E, 2)."""
        return self._half_edges[0]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(E, 2) triangles adjacent to each edge; -1 marks a missing side."""
        edges, inverse, _ = self._half_edges
        tri_of_he = np.tile(np.arange(self.n_triangles), 3)
        order = np.argsort(inverse, kind="stable")
        e_sorted = inverse[order]
        first = np.r_[True, e_sorted[1:] != e_sorted[:-1]]
        out = np.full((len(edges), 2), -1, dtype=np.int64)
        out[e_sorted[first], 0] = tri_of_he[order[first]]
        out[e_sorted[~first], 1] = tri_of_he[order[~first]]
        return out

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """(m, 3) edge index opposite each local vertex."""
        _, inverse, _ = self._half_edges
        return inverse.reshape(3, -1).T.copy()

    @cached_property
    def triangle_neighbors(self) -> np.ndarray:
        """(m, 3) triangle across the edge opposite each local vertex, -1 on the boundary."""
        et = self.edge_triangles
        te = self.triangle_edges
        own = np.arange(self.n_triangles)[:, None]
        a, b = et[te, 0], et[te, 1]
        return np.where(a == own, b, a)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self._edge_counts == 1]

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency with edge lengths as weights."""
        e = self.edges
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        n = self.n_vertices
        a = sparse.coo_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return a.tocsr()

    @cached_property
    def areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.triangles)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit triangle normals (3-D meshes); for 2-D meshes the +z orientation sign."""
        p0, p1, p2 = (self.vertices[self.triangles[:, k]] for k in range(3))
        e1, e2 = p1 - p0, p2 - p0
        if self.dimension == 2:
            return np.sign(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        n = np.cross(e1, e2)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def vertex_triangles(self) -> list[np.ndarray]:
        """Incident triangle indices per vertex."""
        t = self.triangles
        order = np.argsort(t.ravel(), kind="stable")
        tri_ids = order // 3
        counts = np.bincount(t.ravel(), minlength=self.n_vertices)
        return np.split(tri_ids, np.cumsum(counts)[:-1])

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles


@dataclass(frozen=True)
class BoundaryTag:
    """Named vertex sets on the mesh boundary (``dirichlet``, ``robin``, ``neumann``...).

    ``edges`` keeps the boundary edges of each part, needed for flux terms.
    """

    parts: dict[str, np.ndarray]
    edges: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.parts[name]

    def __contains__(self, name: str) -> bool:
        return name in self.parts

    @property
    def names(self) -> list[str]:
        return list(self.parts)

    def all_vertices(self) -> np.ndarray:
        return np.unique(np.concatenate(list(self.parts.values())))


def boundary_vertices(mesh: TriMesh) -> np.ndarray:
    """Sorted indices of vertices incident to an edge with a single adjacent triangle."""
    return np.unique(mesh.boundary_edges.ravel())


def triangle_geometry(mesh: TriMesh, t: int):
    """Area, centroid and unit normal (3-D) or orientation sign (2-D) of triangle ``t``."""
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle {t} out of range")
    return float(mesh.areas[t]), mesh.centroids[t].copy(), np.copy(mesh.normals[t])


# ---------------------------------------------------------------- file formats


def _strip(lines):
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def _read_off(text: str):
    lines = _strip(text.splitlines())
    try:
        header = next(lines)
    except StopIteration:
        raise MeshParseError("empty OFF file") from None
    tokens = header.split()
    if tokens[0].upper() != "OFF":
        if tokens[0].upper().endswith("OFF"):
            raise MeshParseError(f"unsupported OFF variant {tokens[0]!r}")
        raise MeshParseError("missing OFF header")
    if len(tokens) > 1 and tokens[1].upper() == "BINARY":
        raise MeshParseError("binary OFF is not supported")
    rest = tokens[1:]
    if not rest:
        try:
            rest = next(lines).split()
        except StopIteration:
            raise MeshParseError("missing OFF counts") from None
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise MeshParseError("bad OFF counts line") from None
    verts, faces = [], []
    try:
        for _ in range(nv):
            verts.append([float(x) for x in next(lines).split()[:3]])
        for k in range(nf):
            tok = next(lines).split()
            cnt = int(tok[0])
            if cnt != 3:
                raise NonTriangleFace(f"face {k} has {cnt} vertices")
            faces.append([int(x) for x in tok[1:4]])
    except StopIteration:
        raise MeshParseError("OFF file truncated") from None
    except MeshError:
        raise
    except ValueError as err:
        raise MeshParseError(str(err)) from None
    return verts, faces


def _read_obj(text: str):
    verts, faces = [], []
    for k, line in enumerate(_strip(text.splitlines())):
        tok = line.split()
        if tok[0] == "v":
            try:
                verts.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise MeshParseError(f"bad vertex on line {k + 1}") from None
        elif tok[0] == "f":
            if len(tok) != 4:
                raise NonTriangleFace(f"face with {len(tok) - 1} vertices on line {k + 1}")
            face = []
            for item in tok[1:]:
                idx = int(item.split("/")[0])
                face.append(idx - 1 if idx > 0 else len(verts) + idx)
            faces.append(face)
    if not verts:
        raise MeshParseError("OBJ file has no vertices")
    return verts, faces


def load_mesh(path, format: str | None = None, dim: int | None = None) -> TriMesh:
    """Read an ASCII OFF or OBJ triangle mesh.

    The format is inferred from the suffix when not given. With ``dim=None``
    a mesh whose z coordinates are all exactly zero is returned as 2-D.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    raw = path.read_bytes()
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise MeshParseError("binary mesh files are not supported") from None
    if fmt == "OFF":
        verts, faces = _read_off(text)
    elif fmt == "OBJ":
        verts, faces = _read_obj(text)
    else:
        raise MeshParseError(f"unknown mesh format {fmt!r}")
    v = np.asarray(verts, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise MeshParseError("vertices need three coordinates")
    if dim == 2 or (dim is None and np.all(v[:, 2] == 0.0)):
        v = v[:, :2]
    return TriMesh(v, np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def write_off(mesh: TriMesh, path) -> None:
    """Write an ASCII OFF file; coordinates use ``repr`` so reloading is bit-exact."""
    v = mesh.vertices
    if mesh.dimension == 2:
        v = np.column_stack([v, np.zeros(len(v))])
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    lines += [" ".join(repr(float(x)) for x in row) for row in v]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- generators


def generate_square(element_size: float) -> tuple[TriMesh, BoundaryTag]:
    """Structured triangulation of [-1, 1]^2 with every boundary vertex tagged ``dirichlet``."""
    if not 0 < element_size <= 1:
        raise ValueError("element_size must lie in (0, 1]")
    n = max(2, int(round(2.0 / element_size))) + 1
    xs = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(n * n).reshape(n, n)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    mesh = TriMesh(verts, tris)
    bnd = mesh.boundary_edges
    return mesh, BoundaryTag({"dirichlet": boundary_vertices(mesh)}, {"dirichlet": bnd})


def generate_coil(
    helix_diameter_mm: float = 30.0,
    pitch_mm: float = 12.0,
    revolutions: float = 4.0,
    tube_radius_mm: float = 5.0,
    n_axial: int = 32,
    n_circ: int = 12,
) -> TriMesh:
    """Open-ended tube swept along a helix.

    ``n_axial`` is the number of rings per revolution and ``n_circ`` the
    number of vertices around the tube. The cross-section is placed in the
    Frenet normal plane of the helix, so every vertex sits exactly
    ``tube_radius_mm`` from the centerline.
    """
    if min(helix_diameter_mm, pitch_mm, revolutions, tube_radius_mm) <= 0:
        raise ValueError("coil parameters must be positive")
    if n_axial < 8 or n_circ < 6:
        raise ValueError("need n_axial >= 8 per revolution and n_circ >= 6")
    if pitch_mm < 2 * tube_radius_mm:
        raise ValueError("pitch smaller than the tube diameter: neighbouring turns intersect")
    R = helix_diameter_mm / 2
    if tube_radius_mm >= R:
        raise ValueError("tube radius must be smaller than the helix radius")
    c = pitch_mm / (2 * math.pi)
    n_rings = max(2, int(math.ceil(n_axial * revolutions)) + 1)
    t = np.linspace(0.0, 2 * math.pi * revolutions, n_rings)
    center = helix_point(t, R, c)
    speed = math.hypot(R, c)
    T = np.column_stack([-R * np.sin(t), R * np.cos(t), np.full_like(t, c)]) / speed
    N = np.column_stack([-np.cos(t), -np.sin(t), np.zeros_like(t)])
    B = np.cross(T, N)
    phi = 2 * math.pi * np.arange(n_circ) / n_circ
    ring = np.cos(phi)[None, :, None] * N[:, None, :] + np.sin(phi)[None, :, None] * B[:, None, :]
    verts = (center[:, None, :] + tube_radius_mm * ring).reshape(-1, 3)
    idx = np.arange(n_rings * n_circ).reshape(n_rings, n_circ)
    nxt = np.roll(idx, -1, axis=1)
    a, b = idx[:-1].ravel(), nxt[:-1].ravel()
    c2, d = idx[1:].ravel(), nxt[1:].ravel()
    tris = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c2])])
    return TriMesh(verts, tris)


def helix_point(t, radius: float, rise_per_radian: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.stack([radius * np.cos(t), radius * np.sin(t), rise_per_radian * t], axis=-1)


@dataclass(frozen=True)
class HeatsinkSpec:
    """Comb-shaped heat sink: a rectangular base with fins standing on its top.

    Fins are listed left to right; ``gaps`` holds the spacing before the
    first fin, between consecutive fins and after the last one
    (``len(fin_widths) + 1`` entries). All lengths in mm.
    """

    base_height: float = 5.0
    fin_widths: tuple = (1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0)
    fin_heights: tuple = (7.0,) * 8
    gaps: tuple = (1.5,) + (1.5,) * 7 + (1.5,)

    @property
    def width(self) -> float:
        return float(sum(self.fin_widths) + sum(self.gaps))


def _breakpoints(points, h):
    pts = np.unique(np.round(np.asarray(points, dtype=np.float64), 12))
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, int(math.ceil((b - a) / h - 1e-9)))
        out.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(out)


def generate_heatsink(spec: HeatsinkSpec | None = None, element_size: float = 0.5) -> tuple[TriMesh, BoundaryTag]:
    """Triangulate a comb heat sink on a tensor grid conforming to every fin edge.

    Tags: ``dirichlet`` on the base bottom, ``neumann`` on the left and right
    sides, ``robin`` on every other boundary edge.
    """
    spec = spec or HeatsinkSpec()
    nf = len(spec.fin_widths)
    if nf == 0 or len(spec.fin_heights) != nf or len(spec.gaps) != nf + 1:
        raise ValueError("need matching fin_widths/fin_heights and len(gaps) == n_fins + 1")
    if min(spec.fin_widths) <= 0 or min(spec.fin_heights) <= 0 or spec.base_height <= 0:
        raise ValueError("fin and base dimensions must be positive")
    if min(spec.gaps[1:-1], default=1.0) <= 0 or min(spec.gaps[0], spec.gaps[-1]) < 0:
        raise ValueError("overlapping fins")
    if element_size <= 0:
        raise ValueError("element_size must be positive")
    x_edges = [0.0]
    fins = []
    x = spec.gaps[0]
    for w, g in zip(spec.fin_widths, spec.gaps[1:]):
        fins.append((x, x + w))
        x_edges += [x, x + w]
        x += w + g
    W = spec.width
    x_edges.append(W)
    y_edges = [0.0, spec.base_height] + [spec.base_height + hf for hf in spec.fin_heights]
    xs = _breakpoints(x_edges, element_size)
    ys = _breakpoints(y_edges, element_size)
    nx, ny = len(xs), len(ys)
    xc = 0.5 * (xs[:-1] + xs[1:])
    yc = 0.5 * (ys[:-1] + ys[1:])
    inside = np.zeros((ny - 1, nx - 1), dtype=bool)
    inside[yc < spec.base_height, :] = True
    for (x0, x1), hf in zip(fins, spec.fin_heights):
        cols = (xc > x0) & (xc < x1)
        rows = yc < spec.base_height + hf
        inside[np.ix_(rows, cols)] = True
    node = np.arange(nx * ny).reshape(ny, nx)
    j, i = np.nonzero(inside)
    a, b = node[j, i], node[j, i + 1]
    c, d = node[j + 1, i], node[j + 1, i + 1]
    # alternate diagonals so the left and right halves mirror each other
    flip = xc[i] > W / 2
    t1 = np.where(flip[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, d]))
    t2 = np.where(flip[:, None], np.column_stack([b, d, c]), np.column_stack([a, d, c]))
    tris = np.concatenate([t1, t2])
    used = np.unique(tris)
    remap = np.full(nx * ny, -1)
    remap[used] = np.arange(len(used))
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])[used]
    mesh = TriMesh(verts, remap[tris])
    be = mesh.boundary_edges
    p, q = mesh.vertices[be[:, 0]], mesh.vertices[be[:, 1]]
    tol = 1e-9
    bottom = (np.abs(p[:, 1]) < tol) & (np.abs(q[:, 1]) < tol)
    sides = ((np.abs(p[:, 0]) < tol) & (np.abs(q[:, 0]) < tol)) | (
        (np.abs(p[:, 0] - W) < tol) & (np.abs(q[:, 0] - W) < tol)
    )
    robin = ~(bottom | sides)
    edges = {"dirichlet": be[bottom], "robin": be[robin], "neumann": be[sides]}
    parts = {k: np.unique(e.ravel()) for k, e in edges.items()}
    return mesh, BoundaryTag(parts, edges)


def generate_sphere(
    n_vertices: int = 1000,
    radius: float = 1.0,
    radial: Callable[[np.ndarray], np.ndarray] | None = None,
) -> TriMesh:
    """Fibonacci-lattice sphere triangulated by its convex hull.

    ``radial`` optionally maps unit directions (n, 3) to a positive radius
    scale, giving star-shaped genus-0 surfaces on the same connectivity.
    """
    if n_vertices < 4:
        raise ValueError("need at least 4 vertices")
    k = np.arange(n_vertices) + 0.5
    z = 1 - 2 * k / n_vertices
    r = np.sqrt(1 - z * z)
    phi = math.pi * (1 + math.sqrt(5)) * k
    u = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    tris = ConvexHull(u).simplices.astype(np.int64)
    p0, p1, p2 = (u[tris[:, j]] for j in range(3))
    outward = np.einsum("ij,ij->i", np.cross(p1 - p0, p2 - p0), p0) > 0
    tris[~outward] = tris[~outward][:, [0, 2, 1]]
    scale = np.full(n_vertices, float(radius))
    if radial is not None:
        scale *= np.asarray(radial(u), dtype=np.float64)
    verts = u * scale[:, None]
    return TriMesh(verts, tris)


def bumpy_radius(amplitude: float = 0.25, lobes: Sequence[Sequence[float]] | None = None):
    """Radial profile with a few smooth bumps, for non-trivial genus-0 test surfaces."""
    lobes = np.asarray(lobes if lobes is not None else [[0, 0, 1], [1, 0, 0], [-0.5, 0.8, -0.3], [0, -1, -0.5]], dtype=np.float64)
    lobes /= np.linalg.norm(lobes, axis=1, keepdims=True)

    def radial(u):
        cos = u @ lobes.T
        return 1.0 + amplitude * np.exp(-4 * (1 - cos)).sum(axis=1)

    return radial

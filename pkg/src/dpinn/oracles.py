"""Ground-truth generators: geodesic distances, the heat-sink BVP and a manufactured Poisson problem."""

from __future__ import annotations

import heapq
import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import spsolve

from .fem import assemble_stiffness, boundary_mass
from .mesh import BoundaryTag, TriMesh

# ---------------------------------------------------------------- geodesics


@dataclass(frozen=True)
class GeodesicField:
    source: int
    distances: np.ndarray


def _solve_planar(ta, tb, gaa, gab, gbb):
    """Planar-front arrival time at the origin from known times at ``a`` and ``b``.

    The triangle enters only through the Gram matrix of its two edge vectors.
    Returns ``inf`` when the characteristic does not pass between ``a`` and ``b``.
    """
    det = gaa * gbb - gab * gab
    s11, s12, s22 = gbb / det, -gab / det, gaa / det
    alpha = s11 + 2 * s12 + s22
    beta = (s11 + s12) * ta + (s12 + s22) * tb
    gamma = s11 * ta * ta + 2 * s12 * ta * tb + s22 * tb * tb - 1.0
    disc = beta * beta - alpha * gamma
    if disc < 0:
        return math.inf
    t = (beta + math.sqrt(disc)) / alpha
    ca = s11 * (ta - t) + s12 * (tb - t)
    cb = s12 * (ta - t) + s22 * (tb - t)
    if ca > 0 or cb > 0:
        return math.inf
    return t


def _solve_circular(ta, tb, gaa, gab, gbb):
    """Arrival time at the origin from a virtual point source trilaterated from ``a`` and ``b``.

    The source sits at distance ``ta`` from ``a`` and ``tb`` from ``b`` on the
    far side of segment ab; exact for a point source on a flat patch.
    Falls back to the planar front when the circles do not meet.
    """
    la = math.sqrt(gaa)
    bx = gab / la
    by = math.sqrt(max(gbb - bx * bx, 0.0))
    ex, ey = bx - la, by
    L2 = ex * ex + ey * ey
    L = math.sqrt(L2)
    x = (ta * ta - tb * tb + L2) / (2 * L)
    h2 = ta * ta - x * x
    if h2 < 0:
        return _solve_planar(ta, tb, gaa, gab, gbb)
    h = math.sqrt(h2)
    ux, uy = ex / L, ey / L
    # normal of ab pointing away from the origin (a = (la, 0) with la > 0)
    nx, ny = uy, -ux
    if nx < 0:
        nx, ny = -nx, -ny
    sx = la + x * ux + h * nx
    sy = x * uy + h * ny
    lam_b = sy / by
    lam_a = (sx - lam_b * bx) / la
    if lam_a < 0 or lam_b < 0:
        return math.inf
    return math.hypot(sx, sy)


def _unfold(p, q, lp, lq, away_from):
    """2-D point at distances ``lp`` from ``p`` and ``lq`` from ``q`` on the far side of line pq."""
    e = q - p
    L = math.hypot(e[0], e[1])
    ex = e / L
    ey = np.array([-ex[1], ex[0]])
    x = (lp * lp - lq * lq + L * L) / (2 * L)
    y = math.sqrt(max(lp * lp - x * x, 0.0))
    side = np.dot(away_from - p, ey)
    return p + x * ex - math.copysign(y, side) * ey


_LOCAL_SOLVERS = {"circular": _solve_circular, "planar": _solve_planar}


class _FastMarcher:
    """Precomputed local stencils for fast marching on a fixed mesh.

    Obtuse corners are handled by unfolding neighbouring triangles into the
    corner's plane until a vertex lands inside the acute cone, then updating
    through the two virtual acute triangles.
    """

    def __init__(self, mesh: TriMesh, max_unfold: int = 12, front: str = "circular"):
        self.mesh = mesh
        self.solve = _LOCAL_SOLVERS[front]
        v = mesh.vertices
        t = mesh.triangles
        edge_id = {tuple(e): k for k, e in enumerate(mesh.edges.tolist())}
        et = mesh.edge_triangles
        self.entries = [[] for _ in range(mesh.n_vertices)]
        self.extra_triggers = [[] for _ in range(mesh.n_vertices)]
        for f, tri in enumerate(t.tolist()):
            for k in range(3):
                c, a, b = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
                va, vb = v[a] - v[c], v[b] - v[c]
                gaa, gab, gbb = float(va @ va), float(va @ vb), float(vb @ vb)
                virt = None
                if gab < 0:
                    virt = self._split(f, c, a, b, gaa, gab, gbb, edge_id, et, max_unfold)
                    if virt is not None:
                        self.extra_triggers[virt[0]].append(c)
                self.entries[c].append((a, b, gaa, gab, gbb, virt))
        self.neighbors = [np.unique(t[tris]).tolist() for tris in mesh.vertex_triangles]

    def _split(self, f, c, a, b, gaa, gab, gbb, edge_id, et, max_unfold):
        v = self.mesh.vertices
        t = self.mesh.triangles
        la, lb = math.sqrt(gaa), math.sqrt(gbb)
        A = np.array([la, 0.0])
        cos = gab / (la * lb)
        B = lb * np.array([cos, math.sqrt(max(1 - cos * cos, 0.0))])
        C = np.zeros(2)
        p, q, P, Q, face, opposite = a, b, A, B, f, C
        for _ in range(max_unfold):
            e = edge_id[(min(p, q), max(p, q))]
            nxt = et[e, 0] if et[e, 0] != face else et[e, 1]
            if nxt < 0:
                return None
            x = next(w for w in t[nxt].tolist() if w != p and w != q)
            X = _unfold(P, Q, float(np.linalg.norm(v[x] - v[p])), float(np.linalg.norm(v[x] - v[q])), opposite)
            da, db = X @ A, X @ B
            if da > 0 and db > 0:
                gdd, gad, gdb = float(X @ X), float(A @ X), float(X @ B)
                return (x, (gaa, gad, gdd), (gdd, gdb, gbb))
            if da <= 0:
                opposite, q, Q = Q, x, X
            else:
                opposite, p, P = P, x, X
            face = nxt
        return None

    def _local(self, c, T, alive):
        solve = self.solve
        best = math.inf
        for a, b, gaa, gab, gbb, virt in self.entries[c]:
            ka, kb = alive[a], alive[b]
            if ka:
                best = min(best, T[a] + math.sqrt(gaa))
            if kb:
                best = min(best, T[b] + math.sqrt(gbb))
            if virt is None:
                if ka and kb:
                    best = min(best, solve(T[a], T[b], gaa, gab, gbb))
                continue
            d, gad, gdb = virt
            if alive[d]:
                best = min(best, T[d] + math.sqrt(gad[2]))
                if ka:
                    best = min(best, solve(T[a], T[d], *gad))
                if kb:
                    best = min(best, solve(T[d], T[b], *gdb))
        return best

    def __call__(self, source: int) -> np.ndarray:
        n = self.mesh.n_vertices
        T = [math.inf] * n
        alive = [False] * n
        T[source] = 0.0
        heap = [(0.0, source)]
        while heap:
            tc, c = heapq.heappop(heap)
            if alive[c] or tc > T[c]:
                continue
            alive[c] = True
            for w in self.neighbors[c] + self.extra_triggers[c]:
                if alive[w]:
                    continue
                tw = self._local(w, T, alive)
                if tw < T[w]:
                    T[w] = tw
                    heapq.heappush(heap, (tw, w))
        return np.asarray(T)


_MARCHERS: "weakref.WeakKeyDictionary[TriMesh, _FastMarcher]" = weakref.WeakKeyDictionary()


def _marcher(mesh: TriMesh) -> _FastMarcher:
    fm = _MARCHERS.get(mesh)
    if fm is None:
        fm = _MARCHERS[mesh] = _FastMarcher(mesh)
    return fm


def geodesic_field(mesh: TriMesh, source: int) -> GeodesicField:
    """Geodesic distances from ``source`` by fast marching.

    Local updates trilaterate a virtual point source across each triangle
    (exact on flat patches); obtuse corners are split by unfolding.
    """
    if not 0 <= source < mesh.n_vertices:
        raise IndexError(f"source {source} out of range")
    d = _marcher(mesh)(int(source))
    if not np.all(np.isfinite(d)):
        raise ValueError("mesh is disconnected")
    d.flags.writeable = False
    return GeodesicField(int(source), d)


def dijkstra_distances(mesh: TriMesh, source: int) -> np.ndarray:
    """Shortest edge-path distances, an upper bound for the geodesic distance."""
    return dijkstra(mesh.adjacency, directed=False, indices=int(source))


def great_circle_distance(x1, x2, radius: float = 1.0) -> np.ndarray:
    u1 = np.asarray(x1, dtype=np.float64)
    u2 = np.asarray(x2, dtype=np.float64)
    u1 = u1 / np.linalg.norm(u1, axis=-1, keepdims=True)
    u2 = u2 / np.linalg.norm(u2, axis=-1, keepdims=True)
    cos = np.clip(np.sum(u1 * u2, axis=-1), -1.0, 1.0)
    return radius * np.arccos(cos)


@dataclass(frozen=True)
class PairSample:
    i: int
    j: int
    distance: float


def _pair_from_index(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # row-major enumeration of i <= j; row i starts at i*n - i*(i-1)/2
    k = np.asarray(k, dtype=np.int64)
    b = 2 * n + 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2).astype(np.int64)
    start = i * n - i * (i - 1) // 2
    i[k < start] -= 1
    nxt = (i + 1) * n - (i + 1) * i // 2
    under = k >= nxt
    i[under] += 1
    start = i * n - i * (i - 1) // 2
    return i, i + (k - start)


def total_pairs(n_vertices: int) -> int:
    return n_vertices * (n_vertices + 1) // 2


def sample_pairs(mesh: TriMesh, count: int, seed: int = 0, distance=None) -> list[PairSample]:
    """Unordered vertex pairs (i <= j) drawn uniformly without replacement.

    Distances come from one fast-marching run per distinct first index, or
    from ``distance(i_array, j_array)`` when given (closed-form oracles).
    """
    n = mesh.n_vertices
    total = total_pairs(n)
    if count < 0 or count > total:
        raise ValueError(f"count must lie in [0, {total}]")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    k = np.sort(rng.choice(total, size=count, replace=False))
    i, j = _pair_from_index(k, n)
    if distance is not None:
        d = np.asarray(distance(i, j), dtype=np.float64)
    else:
        d = np.empty(count)
        for src in np.unique(i):
            sel = i == src
            d[sel] = geodesic_field(mesh, int(src)).distances[j[sel]]
    return [PairSample(int(a), int(b), float(c)) for a, b, c in zip(i, j, d)]


def pairs_to_arrays(pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    arr = np.array([(p.i, p.j, p.distance) for p in pairs], dtype=np.float64)
    return arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2]


# ---------------------------------------------------------------- heat sink


@dataclass(frozen=True)
class BvpSolution:
    temperature: np.ndarray
    tags: BoundaryTag
    robin_coeff: float
    residual: float


def solve_heat_bvp(mesh: TriMesh, tags: BoundaryTag, robin_coeff: float = 0.1, dirichlet_value: float = 1.0) -> BvpSolution:
    """Steady heat conduction with a fixed-temperature base and convective losses.

    Solves ``Δu = 0`` with ``u = dirichlet_value`` on the ``dirichlet`` part,
    outward flux ``-∇u·n = robin_coeff u`` on ``robin`` edges and zero flux
    everywhere else.
    """
    if "dirichlet" not in tags or len(tags["dirichlet"]) == 0:
        raise ValueError("singular system: no Dirichlet boundary")
    K = assemble_stiffness(mesh)
    if "robin" in tags.edges and robin_coeff != 0:
        K = K + robin_coeff * boundary_mass(mesh, tags.edges["robin"])
    K = sparse.csr_matrix(K)
    n = mesh.n_vertices
    fixed = np.zeros(n, dtype=bool)
    fixed[tags["dirichlet"]] = True
    u = np.zeros(n)
    u[fixed] = dirichlet_value
    free = ~fixed
    rhs = -K[free][:, fixed] @ u[fixed]
    u[free] = spsolve(K[free][:, free].tocsc(), rhs)
    res = np.linalg.norm(K[free] @ u) / max(np.linalg.norm(rhs), 1e-300)
    return BvpSolution(u, tags, robin_coeff, float(res))


# ---------------------------------------------------------------- Poisson


class ManufacturedPoisson:
    """``u = (x^2-1)(y^2-1) exp(-(x-y)^2 / l^2)`` on [-1, 1]^2 and its Laplacian ``f``."""

    def __init__(self, width: float = 0.5):
        if width <= 0:
            raise ValueError("width must be positive")
        self.width = float(width)

    def u(self, x, y):
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        return (x * x - 1) * (y * y - 1) * np.exp(-((x - y) ** 2) / self.width ** 2)

    def f(self, x, y):
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        l2 = self.width ** 2
        s = x - y
        p = (x * x - 1) * (y * y - 1)
        e = np.exp(-(s * s) / l2)
        return e * (2 * (x * x + y * y - 2) + 8 * s * s * (x * y + 1) / l2 + p * (-4 / l2 + 8 * s * s / l2 ** 2))


def manufactured_poisson(width: float = 0.5):
    """Closed-form solution and source evaluators ``(u, f)`` with ``Δu = f``."""
    problem = ManufacturedPoisson(width)
    return problem.u, problem.f

"""Operator network for geodesic distances between encoded surface points.

Two MLPs, a trunk ``T`` and a branch ``Bn``, map encodings to a latent
vector of width ``p``; the raw prediction ``T(v1) . Bn(v2)`` is
symmetrized and multiplied by ``(1 - cos(v1, v2)) / 2`` so that the
distance is symmetric and vanishes on the diagonal for any parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from .mesh import TriMesh
from .nn import MLP, Adam, forward, init_mlp
from .oracles import PairSample, pairs_to_arrays
from .pinn import TrainingDiverged, _safe_norm, _sample
from .spectral import EigenBasis, eigenfunction_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GeodesicNet:
    trunk: MLP
    branch: MLP
    out_scale: float = 1.0

    def __post_init__(self):
        if self.trunk.layer_sizes[-1] != self.branch.layer_sizes[-1]:
            raise ValueError("trunk and branch output widths differ")
        if self.trunk.layer_sizes[0] != self.branch.layer_sizes[0]:
            raise ValueError("trunk and branch input widths differ")

    @property
    def params(self):
        return (self.trunk.params, self.branch.params)

    @property
    def n_inputs(self) -> int:
        return self.trunk.layer_sizes[0]

    @property
    def latent_width(self) -> int:
        return self.trunk.layer_sizes[-1]

    def with_params(self, params) -> "GeodesicNet":
        return GeodesicNet(self.trunk.replace(params[0]), self.branch.replace(params[1]), self.out_scale)

    def __call__(self, v1, v2) -> np.ndarray:
        return predict_distance(self, v1, v2)


def init_geodesic_net(n_modes: int, hidden=(200,) * 10, latent: int = 200, seed: int = 0, out_scale: float = 1.0) -> GeodesicNet:
    sizes = (n_modes, *hidden, latent)
    rng = np.random.default_rng(seed)
    s_trunk, s_branch = rng.integers(2**31, size=2)
    return GeodesicNet(init_mlp(sizes, int(s_trunk)), init_mlp(sizes, int(s_branch)), out_scale)


def _distance(params, out_scale, v1, v2):
    """Wrapped distance for batches ``(B, N)`` or single encodings ``(N,)``."""
    trunk, branch = params
    t1, t2 = forward(trunk, v1), forward(trunk, v2)
    b1, b2 = forward(branch, v1), forward(branch, v2)
    raw = jnp.sum(t1 * b2, axis=-1) + jnp.sum(t2 * b1, axis=-1)
    n1 = jnp.sum(v1 * v1, axis=-1)
    n2 = jnp.sum(v2 * v2, axis=-1)
    cos = jnp.sum(v1 * v2, axis=-1) / jnp.sqrt(n1 * n2)
    return out_scale * 0.5 * (1.0 - cos) * raw


def predict_distance(net: GeodesicNet, v1, v2) -> np.ndarray:
    """Predicted geodesic distance between encodings (single or batched)."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape[-1] != net.n_inputs or v2.shape[-1] != net.n_inputs:
        raise ValueError(f"encodings must have length {net.n_inputs}")
    if np.any(np.linalg.norm(v1, axis=-1) == 0) or np.any(np.linalg.norm(v2, axis=-1) == 0):
        raise ValueError("zero-norm encoding")
    return np.asarray(_distance(net.params, net.out_scale, jnp.asarray(v1), jnp.asarray(v2)))


def _encoding_gradient(params, out_scale, v1, v2):
    return jax.grad(lambda a: _distance(params, out_scale, a, v2))(v1)


_value_and_gradient = jax.jit(jax.value_and_grad(_distance, argnums=2))


def surface_gradient(net: GeodesicNet, mesh: TriMesh, basis: EigenBasis, t: int, v2, v1=None, grads=None) -> np.ndarray:
    """Gradient of the predicted distance with respect to the first point.

    The first point lies in triangle ``t`` (its centroid unless the encoding
    ``v1`` is given). ``grads`` are the cached per-element eigenfunction
    gradients from :func:`spectral.eigenfunction_gradients`.
    """
    if not 0 <= t < mesh.n_triangles:
        raise IndexError(f"triangle {t} out of range")
    if mesh.areas[t] <= 0:
        raise ValueError("degenerate triangle")
    N = net.n_inputs
    G = eigenfunction_gradients(basis, mesh)[t] if grads is None else grads[t]
    G = G[:, :N]
    if v1 is None:
        v1 = basis.vectors[mesh.triangles[t], :N].mean(axis=0)
    dv = _encoding_gradient(net.params, net.out_scale, jnp.asarray(v1), jnp.asarray(np.asarray(v2, dtype=np.float64)))
    return G @ np.asarray(dv)


# ---------------------------------------------------------------- training


@dataclass
class GeodesicConfig:
    n_modes: int = 50
    hidden: tuple = (200,) * 10
    latent: int = 200
    iterations: int = 50_000
    batch: int = 100
    seed: int = 0
    lr: float = 1e-3
    decay_rate: Optional[float] = 0.9
    decay_steps: int = 1000
    data_weight: float = 1.0
    pde_weight: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("n_modes", "latent", "iterations", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def optimizer(self) -> Adam:
        return Adam(lr=self.lr, decay_rate=self.decay_rate, decay_steps=self.decay_steps)


@dataclass
class GeodesicResult:
    net: GeodesicNet
    history: dict = field(default_factory=dict)


def train_geodesic(config: GeodesicConfig, mesh: TriMesh, basis: EigenBasis, pairs, chunk: int = 250) -> GeodesicResult:
    """Fit pair distances plus the Eikonal residual at random (centroid, vertex) pairs.

    ``pairs`` is a sequence of :class:`PairSample` or an ``(i, j, d)`` triple
    of arrays. The output is scaled by the mean training distance so the
    network works in units of order one.
    """
    if isinstance(pairs, (list, tuple)) and len(pairs) and isinstance(pairs[0], PairSample):
        i, j, d = pairs_to_arrays(pairs)
    else:
        i, j, d = (np.asarray(a) for a in pairs)
    if len(d) == 0:
        raise ValueError("no training pairs")
    if basis.n_modes < config.n_modes:
        raise ValueError(f"basis has {basis.n_modes} modes, config asks for {config.n_modes}")
    V = np.asarray(basis.vectors[:, : config.n_modes])
    G = eigenfunction_gradients(basis, mesh)[:, :, : config.n_modes]
    centroid_enc = V[mesh.triangles].mean(axis=1)
    scale = float(np.mean(d)) if np.mean(d) > 0 else 1.0
    net = init_geodesic_net(config.n_modes, config.hidden, config.latent, config.seed, scale)
    opt = config.optimizer()
    arr = {
        "V": jnp.asarray(V),
        "C": jnp.asarray(centroid_enc),
        "G": jnp.asarray(G),
        "i": jnp.asarray(i),
        "j": jnp.asarray(j),
        "d": jnp.asarray(d, dtype=jnp.float64),
    }
    use_pde = config.pde_weight != 0

    def terms(params, batch):
        pred = _distance(params, scale, arr["V"][arr["i"][batch["data"]]], arr["V"][arr["j"][batch["data"]]])
        data = jnp.mean((pred - arr["d"][batch["data"]]) ** 2)
        pde = jnp.zeros(())
        if use_pde:
            tri, tgt = batch["tri"], batch["tgt"]
            dv = jax.vmap(lambda a, b: _encoding_gradient(params, scale, a, b))(arr["C"][tri], arr["V"][tgt])
            g = jnp.einsum("bdn,bn->bd", arr["G"][tri], dv)
            pde = jnp.mean((_safe_norm(g) - 1.0) ** 2)
        total = config.data_weight * data + config.pde_weight * pde
        return total, jnp.stack([data, pde, total])

    def one(carry, batch):
        params, state = carry
        (_, aux), grads = jax.value_and_grad(terms, has_aux=True)(params, batch)
        params, state = opt.update(params, state, grads)
        return (params, state), aux

    run = jax.jit(lambda carry, batches: jax.lax.scan(one, carry, batches))
    rng = np.random.default_rng(config.seed)
    carry = (net.params, opt.init(net.params))
    records, done = [], 0
    while done < config.iterations:
        n = min(chunk, config.iterations - done)
        batches = {"data": _sample(rng, len(d), config.batch, n)}
        if use_pde:
            batches["tri"] = rng.integers(mesh.n_triangles, size=(n, config.batch))
            batches["tgt"] = rng.integers(mesh.n_vertices, size=(n, config.batch))
        carry, rec = run(carry, {k: jnp.asarray(v) for k, v in batches.items()})
        rec = np.asarray(rec)
        if not np.all(np.isfinite(rec)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(rec), axis=1))[0])
            raise TrainingDiverged(f"non-finite loss at iteration {done + bad}: terms {rec[bad]}")
        records.append(rec)
        done += n
    rec = np.concatenate(records)
    history = {"iteration": np.arange(1, len(rec) + 1), "data": rec[:, 0], "pde": rec[:, 1], "total": rec[:, 2]}
    return GeodesicResult(net.with_params(carry[0]), history)


def normalized_mae(pred, truth, max_distance: float) -> float:
    """Mean absolute error divided by the largest geodesic distance on the surface."""
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(truth))) / max_distance)


# ---------------------------------------------------------------- path tracing


@dataclass
class GeodesicPath:
    points: np.ndarray
    triangles: np.ndarray
    converged: bool
    predicted: np.ndarray

    @property
    def length(self) -> float:
        if len(self.points) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


class _Walker:
    """Moves a point across a triangle mesh along in-plane displacements."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.B = _element_gradients(mesh)
        self.nbr = mesh.triangle_neighbors
        self.tri = mesh.triangles
        self.P = mesh.vertices
        self.normals = mesh.normals if mesh.dimension == 3 else None

    def position(self, t, w):
        return w @ self.P[self.tri[t]]

    def _transfer(self, t, w, k, t_new, delta):
        """Carry an edge point and the remaining displacement from ``t`` into ``t_new``."""
        w_new = np.zeros(3)
        for a in range(3):
            if a == k:
                continue
            loc = int(np.flatnonzero(self.tri[t_new] == self.tri[t, a])[0])
            w_new[loc] = w[a]
        w_new /= w_new.sum()
        if self.normals is not None:
            a, b = [self.tri[t, x] for x in range(3) if x != k]
            e = self.P[b] - self.P[a]
            e /= np.linalg.norm(e)
            # in-plane edge normals: out of the old triangle, into the new one
            u_old = np.cross(self.normals[t], e)
            if np.dot(u_old, self.mesh.centroids[t] - self.P[a]) > 0:
                u_old = -u_old
            u_new = np.cross(self.normals[t_new], e)
            if np.dot(u_new, self.mesh.centroids[t_new] - self.P[a]) < 0:
                u_new = -u_new
            delta = np.dot(delta, e) * e + np.dot(delta, u_old) * u_new
        return w_new, delta

    def move(self, t, w, delta, max_crossings: int = 1000):
        """Walk ``delta`` from barycentric point ``(t, w)``; slide along boundary edges."""
        for _ in range(max_crossings):
            if np.linalg.norm(delta) < 1e-15:
                break
            dw = self.B[t].T @ delta
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(dw < -1e-15, -w / dw, np.inf)
            k = int(np.argmin(s))
            if s[k] >= 1.0:
                w = np.clip(w + dw, 0.0, None)
                w /= w.sum()
                break
            step = max(s[k], 0.0)
            w = np.clip(w + step * dw, 0.0, None)
            w[k] = 0.0
            w /= w.sum()
            delta = (1.0 - step) * delta
            t_new = int(self.nbr[t, k])
            if t_new < 0:
                a, b = [self.tri[t, x] for x in range(3) if x != k]
                e = self.P[b] - self.P[a]
                e /= np.linalg.norm(e)
                delta = np.dot(delta, e) * e
                continue
            w, delta = self._transfer(t, w, k, t_new, delta)
            t = t_new
        return t, w


def _element_gradients(mesh):
    from .fem import element_gradients

    return element_gradients(mesh)


def trace_geodesic(
    net: GeodesicNet,
    mesh: TriMesh,
    basis: EigenBasis,
    x1: int,
    x2: int,
    step: float | None = None,
    max_steps: int = 2000,
    radius: float | None = None,
) -> GeodesicPath:
    """Follow ``dx/ds = -grad_x d(x, x2)`` on the surface from vertex ``x1``.

    Explicit Euler with step ``step`` (default half the mean edge length);
    every step is walked along the surface, crossing edges by unfolding.
    Stops once within ``radius`` (default 1.5 mean edge lengths) of ``x2``
    and appends ``x2``; otherwise returns the partial path with
    ``converged=False``.
    """
    n = mesh.n_vertices
    if not (0 <= x1 < n and 0 <= x2 < n):
        raise IndexError("path endpoint out of range")
    h = mesh.mean_edge_length
    step = 0.5 * h if step is None else float(step)
    if step <= 0:
        raise ValueError("step must be positive")
    radius = 1.5 * h if radius is None else float(radius)
    N = net.n_inputs
    V = np.asarray(basis.vectors[:, :N])
    target = mesh.vertices[x2]
    if x1 == x2:
        return GeodesicPath(target[None, :].copy(), np.array([mesh.vertex_triangles[x1][0]]), True, np.zeros(1))
    G = eigenfunction_gradients(basis, mesh)[:, :, :N]
    walker = _Walker(mesh)
    v2 = jnp.asarray(V[x2])

    t = int(mesh.vertex_triangles[x1][0])
    w = (mesh.triangles[t] == x1).astype(np.float64)
    points, tris, preds = [walker.position(t, w)], [t], []
    converged = False
    for _ in range(max_steps):
        p = points[-1]
        if np.linalg.norm(p - target) <= radius:
            converged = True
            break
        v = w @ V[mesh.triangles[t]]
        val, dv = _value_and_gradient(net.params, net.out_scale, jnp.asarray(v), v2)
        preds.append(float(val))
        g = G[t] @ np.asarray(dv)
        t, w = walker.move(t, w, -step * g)
        points.append(walker.position(t, w))
        tris.append(t)
    if converged:
        preds.append(float(_distance(net.params, net.out_scale, jnp.asarray(w @ V[mesh.triangles[t]]), v2)))
        points.append(target.copy())
        tris.append(int(mesh.vertex_triangles[x2][0]))
        preds.append(0.0)
    else:
        log.info("path %d -> %d did not reach the target in %d steps", x1, x2, max_steps)
    return GeodesicPath(np.array(points), np.array(tris), converged, np.array(preds))

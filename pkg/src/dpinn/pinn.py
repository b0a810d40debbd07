"""Physics-informed training of field surrogates on meshes.

Two input representations share one trainer:

* eigenfunction encodings (Δ-PINN): PDE operators act on nodal network
  outputs through FEM matrices (element gradients for the Eikonal residual,
  stiffness rows for Laplace/Poisson);
* Cartesian coordinates (baseline PINN): derivatives come from automatic
  differentiation of the network with respect to its input.

Setting the PDE weight to zero gives the physics-free ablation.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
from scipy import sparse

from . import fem
from .mesh import TriMesh
from .nn import MLP, Adam, NonFiniteError, forward, init_mlp
from .spectral import EigenBasis

log = logging.getLogger(__name__)

RESIDUAL_KINDS = ("eikonal", "laplace", "poisson")


class TrainingDiverged(NonFiniteError):
    pass


# ---------------------------------------------------------------- containers


@dataclass(frozen=True)
class DataSet:
    """Observed values at vertices, plus optional Neumann flux targets."""

    indices: np.ndarray
    values: np.ndarray
    neumann_indices: Optional[np.ndarray] = None
    fluxes: Optional[np.ndarray] = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        val = np.asarray(self.values, dtype=np.float64).ravel()
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("duplicate vertices in data set")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if self.neumann_indices is not None:
            nidx = np.asarray(self.neumann_indices, dtype=np.int64).ravel()
            flux = np.asarray(self.fluxes, dtype=np.float64).ravel()
            if nidx.shape != flux.shape:
                raise ValueError("neumann_indices and fluxes differ in length")
            if len(np.unique(nidx)) != len(nidx):
                raise ValueError("duplicate vertices in Neumann set")
            object.__setattr__(self, "neumann_indices", nidx)
            object.__setattr__(self, "fluxes", flux)

    def __len__(self):
        return len(self.indices)

    def check(self, n_vertices: int) -> None:
        for arr in (self.indices, self.neumann_indices):
            if arr is not None and len(arr) and (arr.min() < 0 or arr.max() >= n_vertices):
                raise IndexError("data vertex out of range")


@dataclass(frozen=True)
class ResidualSpec:
    """Which PDE to penalize and where.

    ``sites`` are triangle indices for ``eikonal`` and vertex indices for
    ``laplace``/``poisson``. For ``poisson`` the equation is ``Δu = source``
    with ``source`` given at the vertices.
    """

    kind: str
    sites: np.ndarray
    source: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        object.__setattr__(self, "sites", np.asarray(self.sites, dtype=np.int64).ravel())
        if self.kind == "poisson":
            if self.source is None:
                raise ValueError("poisson residual needs a source field")
            object.__setattr__(self, "source", np.asarray(self.source, dtype=np.float64).ravel())

    def check(self, mesh: TriMesh, interior_only: bool = True) -> None:
        limit = mesh.n_triangles if self.kind == "eikonal" else mesh.n_vertices
        if len(self.sites) == 0:
            raise ValueError("residual has no sites")
        if self.sites.min() < 0 or self.sites.max() >= limit:
            raise IndexError("residual site out of range")
        if self.kind != "eikonal" and interior_only:
            on_boundary = np.intersect1d(self.sites, np.unique(mesh.boundary_edges))
            if len(on_boundary):
                raise ValueError(f"{len(on_boundary)} residual vertices lie on the boundary")


@dataclass
class TrainConfig:
    n_modes: int = 50
    hidden: tuple = (100,)
    iterations: int = 10_000
    data_batch: int = 10
    pde_batch: int = 10
    boundary_batch: int = 10
    seed: int = 0
    lr: float = 1e-3
    decay_rate: Optional[float] = None
    decay_steps: int = 2000
    data_weight: float = 1.0
    pde_weight: float = 1.0
    boundary_weight: float = 1.0
    normalize_output: bool = True
    scale_inputs: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("n_modes", "iterations", "data_batch", "pde_batch", "boundary_batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def optimizer(self) -> Adam:
        return Adam(lr=self.lr, decay_rate=self.decay_rate, decay_steps=self.decay_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# ---------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class FieldModel:
    """Network plus fixed affine maps on its input and output.

    ``u(raw) = out_shift + out_scale * net((raw - in_shift) * in_scale)``
    where ``raw`` is an eigenfunction encoding (``kind="encoding"``) or a
    position (``kind="coordinates"``).
    """

    net: MLP
    kind: str = "encoding"
    in_shift: np.ndarray | float = 0.0
    in_scale: float = 1.0
    out_shift: float = 0.0
    out_scale: float = 1.0

    @property
    def params(self):
        return self.net.params

    def with_params(self, params) -> "FieldModel":
        return FieldModel(self.net.replace(params), self.kind, self.in_shift, self.in_scale, self.out_shift, self.out_scale)

    def apply(self, params, raw):
        h = (raw - self.in_shift) * self.in_scale
        return self.out_shift + self.out_scale * forward(params, h)[..., 0]

    def __call__(self, raw) -> np.ndarray:
        return np.asarray(self.apply(self.params, jnp.asarray(raw, dtype=jnp.float64)))


def vertex_inputs(source) -> np.ndarray:
    """Per-vertex network inputs: encodings of a basis or coordinates of a mesh."""
    if isinstance(source, EigenBasis):
        return np.asarray(source.vectors)
    if isinstance(source, TriMesh):
        return np.asarray(source.vertices)
    return np.asarray(source, dtype=np.float64)


def make_model(
    inputs: np.ndarray,
    kind: str,
    hidden,
    seed: int,
    data: DataSet | None = None,
    normalize_output: bool = True,
    scale_inputs: bool = False,
) -> FieldModel:
    """Fresh network, optionally with input/output scaling fitted to the inputs and the data.

    Inputs are passed through unchanged unless ``scale_inputs`` is set, in
    which case encodings are divided by their largest magnitude and
    coordinates are mapped isotropically onto ``[-1, 1]``. Outputs are
    standardized with the mean and spread of the observed values.
    """
    inputs = np.asarray(inputs)
    if kind not in ("encoding", "coordinates"):
        raise ValueError(f"unknown input kind {kind!r}")
    in_shift, in_scale = 0.0, 1.0
    if scale_inputs and kind == "encoding":
        in_scale = 1.0 / float(np.abs(inputs).max())
    elif scale_inputs:
        lo, hi = inputs.min(axis=0), inputs.max(axis=0)
        in_shift = 0.5 * (lo + hi)
        in_scale = 2.0 / float((hi - lo).max())
    out_shift, out_scale = 0.0, 1.0
    if normalize_output and data is not None and len(data):
        out_shift = float(data.values.mean())
        spread = float(data.values.std())
        out_scale = spread if spread > 1e-12 * max(1.0, abs(out_shift)) else 1.0
    net = init_mlp((inputs.shape[1], *hidden, 1), seed)
    return FieldModel(net, kind, in_shift, in_scale, out_shift, out_scale)


# ---------------------------------------------------------------- loss terms


def _safe_norm(g):
    s = jnp.sum(g * g, axis=-1)
    pos = s > 0
    return jnp.where(pos, jnp.sqrt(jnp.where(pos, s, 1.0)), 0.0)


def _point_gradient(model: FieldModel, params, x):
    return jax.grad(lambda p: model.apply(params, p))(x)


def _point_laplacian(model: FieldModel, params, x):
    hess = jax.jacfwd(jax.grad(lambda p: model.apply(params, p)))(x)
    return jnp.trace(hess)


def _data_term(model, params, X, idx, y):
    return jnp.mean((model.apply(params, X[idx]) - y) ** 2)


def _eikonal_fem(model, params, X, tri, B):
    u = model.apply(params, X[tri])
    g = jnp.einsum("bdk,bk->bd", B, u)
    return jnp.mean((_safe_norm(g) - 1.0) ** 2)


def _eikonal_ad(model, params, P):
    g = jax.vmap(lambda x: _point_gradient(model, params, x))(P)
    return jnp.mean((_safe_norm(g) - 1.0) ** 2)


def _stencil_term(model, params, X, nbr, w, rhs):
    u = model.apply(params, X[nbr])
    return jnp.mean((jnp.sum(w * u, axis=1) - rhs) ** 2)


def _laplace_ad(model, params, P, f):
    lap = jax.vmap(lambda x: _point_laplacian(model, params, x))(P)
    return jnp.mean((lap - f) ** 2)


def _neumann_ad(model, params, P, normals, g):
    grad = jax.vmap(lambda x: _point_gradient(model, params, x))(P)
    return jnp.mean((jnp.sum(grad * normals, axis=1) - g) ** 2)


def mse_data(model: FieldModel, inputs, data: DataSet) -> float:
    """Mean squared misfit at the observed vertices."""
    if len(data) == 0:
        raise ValueError("empty data set")
    X = jnp.asarray(vertex_inputs(inputs))
    return float(_data_term(model, model.params, X, jnp.asarray(data.indices), jnp.asarray(data.values)))


def eikonal_residual(model: FieldModel, inputs, mesh: TriMesh, elements) -> float:
    """Mean of ``(|B_e u_e| - 1)^2`` over the given triangles."""
    elements = np.asarray(elements, dtype=np.int64)
    B = fem.element_gradients(mesh)[elements]
    X = jnp.asarray(vertex_inputs(inputs))
    return float(_eikonal_fem(model, model.params, X, jnp.asarray(mesh.triangles[elements]), jnp.asarray(B)))


def field_eikonal_residual(u, mesh: TriMesh, elements=None) -> float:
    """Eikonal residual of a nodal field (for oracle fields)."""
    B = fem.element_gradients(mesh)
    if elements is not None:
        elements = np.asarray(elements, dtype=np.int64)
        B, tris = B[elements], mesh.triangles[elements]
    else:
        tris = mesh.triangles
    g = np.einsum("mdk,mk->md", B, np.asarray(u)[tris])
    return float(np.mean((np.linalg.norm(g, axis=1) - 1.0) ** 2))


def poisson_rhs(mesh: TriMesh, source) -> np.ndarray:
    """Right-hand side of ``Δu = source`` for stiffness rows: ``(A u)_i = -m_i source_i``.

    ``A`` approximates ``-Δ`` integrated against the hat function of vertex
    ``i``, so the nodal source is weighted by the lumped vertex mass ``m_i``.
    """
    source = np.asarray(source, dtype=np.float64)
    if source.shape != (mesh.n_vertices,):
        raise ValueError("source must have one value per vertex")
    return -fem.assemble_mass(mesh, lumped=True).diagonal() * source


def laplace_residual(model: FieldModel, inputs, A, vertices, rhs=None, mesh: TriMesh | None = None) -> float:
    """Mean of ``(sum_j A_ij u_j - rhs_i)^2`` over the given vertices.

    ``rhs`` defaults to zero (Laplace). Passing ``mesh`` enforces that the
    vertices are interior.
    """
    vertices = np.asarray(vertices, dtype=np.int64)
    if mesh is not None:
        if len(np.intersect1d(vertices, np.unique(mesh.boundary_edges))):
            raise ValueError("laplace residual evaluated at a boundary vertex")
    nbr, w = fem.padded_rows(A, vertices)
    r = np.zeros(len(vertices)) if rhs is None else np.asarray(rhs, dtype=np.float64)[vertices]
    X = jnp.asarray(vertex_inputs(inputs))
    return float(_stencil_term(model, model.params, X, jnp.asarray(nbr), jnp.asarray(w), jnp.asarray(r)))


def neumann_residual(model: FieldModel, inputs, mesh: TriMesh, vertices, fluxes) -> float:
    """Mean of ``(grad u . n - g)^2`` at boundary vertices, FEM gradients averaged per vertex."""
    op = fem.normal_derivative_operator(mesh, vertices)
    nbr, w = fem.padded_rows(op, np.arange(op.shape[0]))
    X = jnp.asarray(vertex_inputs(inputs))
    g = jnp.asarray(np.asarray(fluxes, dtype=np.float64))
    return float(_stencil_term(model, model.params, X, jnp.asarray(nbr), jnp.asarray(w), g))


def predict_field(model: FieldModel, inputs, chunk: int = 4096) -> np.ndarray:
    """Model evaluated at every vertex."""
    X = vertex_inputs(inputs)
    out = [model(X[k : k + chunk]) for k in range(0, len(X), chunk)]
    return np.concatenate(out)


def nmse(pred, truth) -> float:
    """``sum (pred - truth)^2 / sum (truth - mean(truth))^2``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth differ in shape")
    denom = np.sum((truth - truth.mean()) ** 2)
    if denom == 0:
        raise ValueError("truth has zero variance")
    return float(np.sum((pred - truth) ** 2) / denom)


def mse(pred, truth) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: FieldModel
    history: dict = field(default_factory=dict)

    def history_rows(self):
        keys = ["iteration", "data", "pde", "boundary", "total"]
        return keys, np.column_stack([self.history[k] for k in keys])


def _sample(rng, population: int, size: int, iterations: int) -> np.ndarray:
    size = min(size, population)
    if size == population:
        return np.broadcast_to(np.arange(population), (iterations, size)).copy()
    # argpartition of uniform keys gives a uniform subset without replacement per row
    keys = rng.random((iterations, population))
    return np.argpartition(keys, size - 1, axis=1)[:, :size]


class _Problem:
    """Static arrays and term functions for one (arm, mesh, data, residual) combination."""

    def __init__(self, model: FieldModel, inputs: np.ndarray, mesh: TriMesh, data: DataSet, residual: ResidualSpec | None, config: TrainConfig):
        self.model = model
        self.config = config
        self.use_pde = residual is not None and config.pde_weight != 0
        self.use_bnd = data.neumann_indices is not None and len(data.neumann_indices) > 0 and config.boundary_weight != 0
        arr = {"X": jnp.asarray(inputs), "data_idx": jnp.asarray(data.indices), "data_val": jnp.asarray(data.values)}
        self.sizes = {"data": len(data)}
        fem_mode = model.kind == "encoding"
        if self.use_pde:
            kind = residual.kind
            self.pde_kind = kind
            sites = residual.sites
            self.sizes["pde"] = len(sites)
            if kind == "eikonal":
                if fem_mode:
                    arr["pde_tri"] = jnp.asarray(mesh.triangles[sites])
                    arr["pde_B"] = jnp.asarray(fem.element_gradients(mesh)[sites])
                else:
                    arr["pde_pts"] = jnp.asarray(mesh.centroids[sites])
            else:
                source = np.zeros(mesh.n_vertices) if residual.source is None else residual.source
                if fem_mode:
                    rhs = poisson_rhs(mesh, source)
                    nbr, w = fem.padded_rows(fem.assemble_stiffness(mesh), sites)
                    arr["pde_nbr"], arr["pde_w"] = jnp.asarray(nbr), jnp.asarray(w)
                    arr["pde_rhs"] = jnp.asarray(rhs[sites])
                else:
                    arr["pde_pts"] = jnp.asarray(mesh.vertices[sites])
                    arr["pde_f"] = jnp.asarray(source[sites])
        if self.use_bnd:
            nidx = data.neumann_indices
            self.sizes["bnd"] = len(nidx)
            arr["bnd_g"] = jnp.asarray(data.fluxes)
            if fem_mode:
                op = fem.normal_derivative_operator(mesh, nidx)
                nbr, w = fem.padded_rows(op, np.arange(len(nidx)))
                arr["bnd_nbr"], arr["bnd_w"] = jnp.asarray(nbr), jnp.asarray(w)
            else:
                arr["bnd_pts"] = jnp.asarray(mesh.vertices[nidx])
                arr["bnd_n"] = jnp.asarray(fem.boundary_normals(mesh, nidx))
        self.arrays = arr

    def terms(self, params, arr, batch):
        m = self.model
        X = arr["X"]
        zero = jnp.zeros(())
        d = _data_term(m, params, X, arr["data_idx"][batch["data"]], arr["data_val"][batch["data"]])
        p = zero
        if self.use_pde:
            s = batch["pde"]
            if self.pde_kind == "eikonal":
                if m.kind == "encoding":
                    p = _eikonal_fem(m, params, X, arr["pde_tri"][s], arr["pde_B"][s])
                else:
                    p = _eikonal_ad(m, params, arr["pde_pts"][s])
            elif m.kind == "encoding":
                p = _stencil_term(m, params, X, arr["pde_nbr"][s], arr["pde_w"][s], arr["pde_rhs"][s])
            else:
                p = _laplace_ad(m, params, arr["pde_pts"][s], arr["pde_f"][s])
        b = zero
        if self.use_bnd:
            s = batch["bnd"]
            if m.kind == "encoding":
                b = _stencil_term(m, params, X, arr["bnd_nbr"][s], arr["bnd_w"][s], arr["bnd_g"][s])
            else:
                b = _neumann_ad(m, params, arr["bnd_pts"][s], arr["bnd_n"][s], arr["bnd_g"][s])
        c = self.config
        total = c.data_weight * d + c.pde_weight * p + c.boundary_weight * b
        return total, (d, p, b, total)

    def sample(self, rng, iterations: int) -> dict:
        c = self.config
        out = {"data": _sample(rng, self.sizes["data"], c.data_batch, iterations)}
        if self.use_pde:
            out["pde"] = _sample(rng, self.sizes["pde"], c.pde_batch, iterations)
        if self.use_bnd:
            out["bnd"] = _sample(rng, self.sizes["bnd"], c.boundary_batch, iterations)
        return out


def train(
    config: TrainConfig,
    mesh: TriMesh,
    inputs,
    data: DataSet,
    residual: ResidualSpec | None = None,
    model: FieldModel | None = None,
    chunk: int = 500,
) -> TrainResult:
    """Minimize the weighted data + PDE + boundary loss with mini-batch ADAM.

    ``inputs`` is an :class:`EigenBasis` (Δ-PINN), or the string
    ``"cartesian"`` / the mesh itself for the coordinate-input baseline.
    Batches are drawn without replacement per iteration from a generator
    seeded with ``config.seed``; the history records every term at every
    iteration.
    """
    if isinstance(inputs, str):
        if inputs != "cartesian":
            raise ValueError(f"unknown input mode {inputs!r}")
        inputs = mesh
    kind = "coordinates" if isinstance(inputs, TriMesh) else "encoding"
    table = vertex_inputs(inputs)
    if isinstance(inputs, EigenBasis) and inputs.n_modes > config.n_modes:
        table = table[:, : config.n_modes]
    data.check(mesh.n_vertices)
    if len(data) == 0:
        raise ValueError("empty data set")
    if residual is not None:
        residual.check(mesh, interior_only=residual.kind != "eikonal")
    if model is None:
        model = make_model(table, kind, config.hidden, config.seed, data, config.normalize_output, config.scale_inputs)
    problem = _Problem(model, table, mesh, data, residual, config)
    opt = config.optimizer()
    arrays = problem.arrays

    def one(carry, batch):
        params, state = carry
        (_, aux), grads = jax.value_and_grad(problem.terms, has_aux=True)(params, arrays, batch)
        params, state = opt.update(params, state, grads)
        return (params, state), jnp.stack(aux)

    run = jax.jit(lambda carry, batches: jax.lax.scan(one, carry, batches))
    rng = np.random.default_rng(config.seed)
    carry = (model.params, opt.init(model.params))
    records = []
    done = 0
    while done < config.iterations:
        n = min(chunk, config.iterations - done)
        batches = {k: jnp.asarray(v) for k, v in problem.sample(rng, n).items()}
        carry, terms = run(carry, batches)
        terms = np.asarray(terms)
        if not np.all(np.isfinite(terms)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(terms), axis=1))[0])
            raise TrainingDiverged(f"non-finite loss at iteration {done + bad}: terms {terms[bad]}")
        records.append(terms)
        done += n
    rec = np.concatenate(records)
    history = {
        "iteration": np.arange(1, len(rec) + 1),
        "data": rec[:, 0],
        "pde": rec[:, 1],
        "boundary": rec[:, 2],
        "total": rec[:, 3],
    }
    log.debug("trained %s model: final loss %.3e", kind, rec[-1, 3])
    return TrainResult(model.with_params(carry[0]), history)

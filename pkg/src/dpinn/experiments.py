"""End-to-end experiments: data generation, training of every arm, metrics and artifact files.

Each ``run_*`` function takes a normalized config (see :mod:`dpinn.config`)
and an output directory, writes its files there and returns a summary dict.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import deeponet, export, fem, gp, oracles, pinn, spectral
from .config import ConfigError
from .mesh import BoundaryTag, HeatsinkSpec, TriMesh, bumpy_radius, generate_coil, generate_heatsink, generate_sphere, generate_square, load_mesh

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- helpers


def build_mesh(spec: dict) -> tuple[TriMesh, BoundaryTag | None]:
    if "path" in spec:
        return load_mesh(spec["path"], spec.get("format")), None
    params = {k: v for k, v in spec.items() if k != "generator"}
    name = spec["generator"]
    if name == "coil":
        return generate_coil(**params), None
    if name == "heatsink":
        keys = ("base_height", "fin_widths", "fin_heights", "gaps")
        hs = {k: (tuple(params.pop(k)) if k != "base_height" else params.pop(k)) for k in keys if k in params}
        return generate_heatsink(HeatsinkSpec(**hs), **params)
    if name == "square":
        return generate_square(**params)
    if name == "sphere":
        bumpy = params.pop("bumpy", False)
        return generate_sphere(radial=bumpy_radius() if bumpy else None, **params), None
    raise ConfigError(f"unknown mesh generator {name!r}")


def _train_config(cfg: dict, seed: int, **overrides) -> pinn.TrainConfig:
    return pinn.TrainConfig(**{**cfg["train"], "seed": seed, **overrides})


def _run_arms(arms, mesh, basis, data, residual, train_cfg: dict, seed: int, out: Path):
    """Train each arm on the same data; returns {arm: (prediction, result)}."""
    results = {}
    for arm in arms:
        t0 = time.perf_counter()
        overrides = {"pde_weight": 0.0} if arm == "delta-nophysics" else {}
        config = pinn.TrainConfig(**{**train_cfg, "seed": seed, **overrides})
        inputs = mesh if arm == "pinn" else basis
        res = pinn.train(config, mesh, inputs, data, residual)
        pred = pinn.predict_field(res.model, inputs if arm != "pinn" else mesh)
        export.write_loss_history(out / f"loss_{arm}.csv", res.history)
        log.info("%s trained in %.1f s", arm, time.perf_counter() - t0)
        results[arm] = (pred, res)
    return results


def _summary_table(out: Path, rows: list[tuple[str, float]], name: str = "summary.csv"):
    export.write_csv(out / name, ["metric", "value"], rows)


# ---------------------------------------------------------------- experiments


def run_coil(cfg: dict, out) -> dict:
    """Inverse Eikonal problem: recover a geodesic field from a few samples."""
    out = Path(out)
    seed = cfg["seed"]
    mesh, _ = build_mesh(cfg["mesh"])
    basis = spectral.laplace_beltrami_basis(mesh, cfg["train"]["n_modes"], seed=seed)
    rng = np.random.default_rng(seed)
    source = int(rng.integers(mesh.n_vertices))
    truth = oracles.geodesic_field(mesh, source).distances
    idx = rng.choice(mesh.n_vertices, cfg["n_data"], replace=False)
    data = pinn.DataSet(idx, truth[idx])
    residual = pinn.ResidualSpec("eikonal", np.arange(mesh.n_triangles))
    oracle_res = pinn.field_eikonal_residual(truth, mesh)
    arms = _run_arms(cfg["arms"], mesh, basis, data, residual, cfg["train"], seed, out)
    scores = {arm: pinn.nmse(pred, truth) for arm, (pred, _) in arms.items()}
    fields = {"truth": truth, **{arm: pred for arm, (pred, _) in arms.items()}}
    export.write_field_csv(out / "fields.csv", mesh, fields)
    export.write_vtk(out / "fields.vtk", mesh, {k.replace("-", "_"): v for k, v in fields.items()})
    export.write_csv(out / "data_points.csv", ["vertex", "value"], zip(idx, truth[idx]))
    rows = [("source", source), ("oracle_eikonal_residual", oracle_res)] + [(f"nmse_{a}", s) for a, s in scores.items()]
    _summary_table(out, rows)
    return {"source": source, "oracle_residual": oracle_res, "nmse": scores}


def run_heatsink(cfg: dict, out) -> dict:
    """Recover the interior temperature from boundary measurements only."""
    out = Path(out)
    seed = cfg["seed"]
    mesh, tags = build_mesh(cfg["mesh"])
    if tags is None:
        raise ConfigError("heatsink needs a generated mesh with boundary tags")
    sol = oracles.solve_heat_bvp(mesh, tags, robin_coeff=cfg["robin_coeff"])
    truth = sol.temperature
    basis = spectral.laplace_beltrami_basis(mesh, cfg["train"]["n_modes"], seed=seed)
    rng = np.random.default_rng(seed)
    boundary = np.unique(mesh.boundary_edges)
    if cfg["n_data"] > len(boundary):
        raise ConfigError(f"n_data {cfg['n_data']} exceeds the {len(boundary)} boundary vertices")
    idx = np.sort(rng.choice(boundary, cfg["n_data"], replace=False))
    data = pinn.DataSet(idx, truth[idx])
    interior = np.setdiff1d(np.arange(mesh.n_vertices), boundary)
    residual = pinn.ResidualSpec("laplace", interior)
    arms = _run_arms(cfg["arms"], mesh, basis, data, residual, cfg["train"], seed, out)
    scores = {arm: pinn.nmse(pred, truth) for arm, (pred, _) in arms.items()}
    fields = {"truth": truth, **{arm: pred for arm, (pred, _) in arms.items()}}
    export.write_field_csv(out / "fields.csv", mesh, fields)
    export.write_vtk(out / "fields.vtk", mesh, {k.replace("-", "_"): v for k, v in fields.items()})
    rows = [("bvp_residual", sol.residual)] + [(f"nmse_{a}", s) for a, s in scores.items()]
    _summary_table(out, rows)
    return {"nmse": scores, "bvp_residual": sol.residual}


def poisson_cell(basis_kind: str, n_modes: int, element_size: float, width: float, train_cfg: dict, seed: int) -> dict:
    """One Poisson sweep cell; ``basis_kind`` is ``analytic``, ``numeric`` or ``pinn``."""
    u, f = oracles.manufactured_poisson(width)
    mesh, _ = generate_square(element_size)
    boundary = np.unique(mesh.boundary_edges)
    interior = np.setdiff1d(np.arange(mesh.n_vertices), boundary)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    truth = u(x, y)
    data = pinn.DataSet(boundary, np.zeros(len(boundary)))
    residual = pinn.ResidualSpec("poisson", interior, f(x, y))
    if basis_kind == "pinn":
        inputs = mesh
    elif basis_kind == "analytic":
        inputs = spectral.AnalyticSquareBasis(n_modes).on_mesh(mesh)
    else:
        inputs = spectral.laplace_beltrami_basis(mesh, n_modes, seed=seed)
    # the coordinate network ignores n_modes, so keep the configured value there
    modes = train_cfg.get("n_modes", 1) if basis_kind == "pinn" else n_modes
    config = pinn.TrainConfig(**{**train_cfg, "n_modes": modes, "seed": seed})
    t0 = time.perf_counter()
    res = pinn.train(config, mesh, inputs, data, residual)
    pred = pinn.predict_field(res.model, inputs)
    return {
        "basis": basis_kind,
        "n_modes": n_modes if basis_kind != "pinn" else 0,
        "element_size": element_size,
        "n_vertices": mesh.n_vertices,
        "mse": pinn.mse(pred, truth),
        "final_loss": float(np.mean(res.history["total"][-100:])),
        "seconds": time.perf_counter() - t0,
    }


def poisson_cells(cfg: dict) -> list[tuple]:
    cells = [(b, n, h) for b in cfg["bases"] for n in cfg["n_modes"] for h in cfg["element_sizes"]]
    if cfg["pinn"]:
        cells.insert(0, ("pinn", 0, cfg["pinn_element_size"]))
    return cells


def run_poisson_sweep(cfg: dict, out, parallel: int = 1) -> dict:
    """Error grid over basis kind, mode count and element size."""
    out = Path(out)
    seed = cfg["seed"]
    train_cfg = {k: v for k, v in cfg["train"].items() if k != "n_modes"}
    args = [(b, n, h, cfg["width"], train_cfg, seed) for b, n, h in poisson_cells(cfg)]
    if parallel > 1:
        with ProcessPoolExecutor(parallel) as pool:
            rows = list(pool.map(poisson_cell, *zip(*args)))
    else:
        rows = [poisson_cell(*a) for a in args]
    keys = ["basis", "n_modes", "element_size", "n_vertices", "mse", "final_loss"]
    export.write_csv(out / "grid.csv", keys, ([r[k] for k in keys] for r in rows))
    return {"cells": rows}


def _great_circle(mesh: TriMesh):
    r = np.linalg.norm(mesh.vertices, axis=1)
    if mesh.dimension != 3 or np.ptp(r) > 1e-9 * r.mean():
        raise ConfigError("great-circle distances need a sphere mesh centred at the origin")
    radius = float(r.mean())
    P = mesh.vertices
    return radius, lambda i, j: oracles.great_circle_distance(P[i], P[j], radius)


def run_deeponet(cfg: dict, out) -> dict:
    """Geodesic operator network: pair sampling, training, held-out error and path tracing."""
    out = Path(out)
    seed = cfg["seed"]
    mesh, _ = build_mesh(cfg["mesh"])
    net_cfg = deeponet.GeodesicConfig(**{**cfg["net"], "seed": seed})
    basis = spectral.laplace_beltrami_basis(mesh, net_cfg.n_modes, seed=seed)
    if cfg["distance"] == "great-circle":
        radius, dist = _great_circle(mesh)
        max_distance = np.pi * radius
    else:
        dist, max_distance = None, None
    total = cfg["n_pairs"] + cfg["n_test"]
    pairs = oracles.sample_pairs(mesh, total, seed=seed, distance=dist)
    i, j, d = oracles.pairs_to_arrays(pairs)
    perm = np.random.default_rng(seed).permutation(total)
    i, j, d = i[perm], j[perm], d[perm]
    tr, te = slice(0, cfg["n_pairs"]), slice(cfg["n_pairs"], total)
    if max_distance is None:
        max_distance = float(d.max())
    result = deeponet.train_geodesic(net_cfg, mesh, basis, (i[tr], j[tr], d[tr]))
    net = result.net
    V = np.asarray(basis.vectors[:, : net_cfg.n_modes])
    pred = net(V[i[te]], V[j[te]])
    nmae = deeponet.normalized_mae(pred, d[te], max_distance)
    export.write_csv(out / "test_pairs.csv", ["i", "j", "distance", "predicted"], zip(i[te], j[te], d[te], pred))
    export.write_csv(out / "train_pairs.csv", ["i", "j", "distance"], zip(i[tr], j[tr], d[tr]))
    export.write_loss_history(out / "loss.csv", result.history)

    rng = np.random.default_rng(seed + 1)
    sources = rng.choice(mesh.n_vertices, cfg["n_sources"], replace=False)
    rows, polylines = [], []
    for s in sources:
        targets = rng.choice(np.setdiff1d(np.arange(mesh.n_vertices), [s]), cfg["n_targets"], replace=False)
        ref = dist(np.full(len(targets), s), targets) if dist else oracles.geodesic_field(mesh, int(s)).distances[targets]
        for q, g in zip(targets, ref):
            path = deeponet.trace_geodesic(net, mesh, basis, int(q), int(s))
            rel = abs(path.length - g) / g
            rows.append((int(s), int(q), g, path.length, rel, int(path.converged)))
            polylines.append(path.points)
    export.write_csv(out / "paths.csv", ["source", "target", "geodesic", "path_length", "relative_error", "converged"], rows)
    export.write_polyline_vtk(out / "paths.vtk", polylines)
    ok = np.array([r[5] == 1 and r[4] <= cfg["path_tolerance"] for r in rows])
    frac = float(ok.mean())
    negative = float(np.mean(pred < 0))
    _summary_table(out, [("normalized_mae", nmae), ("path_fraction_within_tolerance", frac), ("negative_prediction_fraction", negative)])
    return {"normalized_mae": nmae, "path_fraction": frac, "negative_fraction": negative}


def _regression_basis(mesh: TriMesh, n_modes: int, seed: int) -> spectral.EigenBasis:
    # dense solves are faster than shift-invert Lanczos when many modes are wanted
    dense = max(1600, mesh.n_vertices) if n_modes > 200 and mesh.n_vertices <= 4000 else 1600
    return spectral.laplace_beltrami_basis(mesh, n_modes, seed=seed, dense_below=dense)


def run_regression(cfg: dict, out) -> dict:
    """Matérn GP against the physics-free encoded network on a smooth surface target."""
    out = Path(out)
    seed = cfg["seed"]
    mesh, _ = build_mesh(cfg["mesh"])
    n_modes = max(cfg["gp_modes"], max(cfg["nn_modes"]))
    basis = _regression_basis(mesh, n_modes, seed)
    rng = np.random.default_rng(seed)
    source = int(rng.integers(mesh.n_vertices))
    target = gp.regression_target(mesh, source)
    kappas = gp.kappa_grid(mesh, cfg["n_kappas"])
    everywhere = np.arange(mesh.n_vertices)
    rows = []
    for size in cfg["train_sizes"]:
        for rep in range(cfg["repeats"]):
            sel = np.random.default_rng([seed, size, rep]).choice(mesh.n_vertices, size, replace=False)
            fit = gp.gp_fit_predict(basis, sel, target[sel], everywhere, kappas, cfg["noise"], cfg["nu"], cfg["gp_modes"])
            rows.append((size, "GP", rep, pinn.mse(fit.mean, target)))
            for n in cfg["nn_modes"]:
                tcfg = _train_config(cfg, seed + rep, n_modes=n)
                pred = gp.delta_nn_regression(tcfg, mesh, basis, sel, target[sel])
                rows.append((size, str(n), rep, pinn.mse(pred, target)))
    export.write_csv(out / "study.csv", ["train_size", "model", "repeat", "mse"], rows)
    medians = {}
    for size in cfg["train_sizes"]:
        for model in ["GP", *map(str, cfg["nn_modes"])]:
            vals = [r[3] for r in rows if r[0] == size and r[1] == model]
            medians.setdefault(size, {})[model] = float(np.median(vals))
    export.write_csv(out / "medians.csv", ["train_size", "model", "median_mse"], ((s, m, v) for s, d in medians.items() for m, v in d.items()))
    return {"medians": medians, "source": source}


def run_eigen(cfg: dict, out) -> dict:
    out = Path(out)
    mesh, _ = build_mesh(cfg["mesh"])
    A, M = fem.assemble_stiffness(mesh), fem.assemble_mass(mesh)
    basis = spectral.solve_eigen(A, M, cfg["n_modes"], seed=cfg["seed"])
    res = basis.residuals(A)
    export.write_csv(out / "eigenvalues.csv", ["index", "eigenvalue", "relative_residual"], zip(range(basis.n_modes), basis.eigenvalues, res))
    shown = min(basis.n_modes, 10)
    export.write_vtk(out / "eigenfunctions.vtk", mesh, {f"v{k}": basis.vectors[:, k] for k in range(shown)})
    return {"eigenvalues": basis.eigenvalues.tolist(), "max_residual": float(np.nanmax(res))}


RUNNERS = {
    "coil-eikonal": run_coil,
    "heatsink": run_heatsink,
    "poisson-sweep": run_poisson_sweep,
    "bunny-deeponet": run_deeponet,
    "regression-study": run_regression,
    "eigen-only": run_eigen,
}


def run_experiment(cfg: dict, out, parallel: int = 1) -> dict:
    """Run a normalized config, writing a manifest beside the results."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    exp = cfg["experiment"]
    mesh_hash = None
    if "mesh" in cfg:
        mesh_hash = export.content_hash(build_mesh(cfg["mesh"])[0])
    t0 = time.perf_counter()
    if exp == "poisson-sweep":
        summary = run_poisson_sweep(cfg, out, parallel)
    else:
        summary = RUNNERS[exp](cfg, out)
    export.write_manifest(
        out / "manifest.json",
        cfg,
        cfg["seed"],
        export.content_hash(cfg, mesh_hash),
        {"mesh_sha256": mesh_hash, "wall_seconds": round(time.perf_counter() - t0, 3)},
    )
    return summary

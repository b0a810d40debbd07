"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment-scale criteria (4, 6, 7, 9, 10, 11) train networks and take
about 40 minutes on one core; select them with ``-m slow`` or skip them with
``-m "not slow"``. A failed criterion fails its test; thresholds are never
adjusted to fit the measured numbers.
"""

import time

import numpy as np
import pytest

from dpinn import deeponet, experiments, fem, nn, oracles, spectral
from dpinn import mesh as M
from dpinn.config import normalize_config

# first-run outputs of criteria 4, 6 and 9, compared again by criterion 11
_FIRST_RUNS: dict = {}


def _square_eigs(n):
    lm = np.arange(6)
    lam = np.sort(np.add.outer(lm**2, lm**2).ravel())[:n]
    return (np.pi / 2) ** 2 * lam


def test_criterion_01_square_eigenvalues(report_criterion):
    t0 = time.perf_counter()
    exact = _square_eigs(10)
    worst = {}
    for h in (0.2, 0.1, 0.05):
        m, _ = M.generate_square(h)
        lam = spectral.laplace_beltrami_basis(m, 10).eigenvalues
        assert abs(lam[0]) < 1e-8
        worst[h] = float(np.max(np.abs(lam[1:] - exact[1:]) / exact[1:]))
    seconds = time.perf_counter() - t0
    slope = np.polyfit(np.log(list(worst)), np.log(list(worst.values())), 1)[0]
    ok = worst[0.2] <= 0.05 and worst[0.05] <= 0.01 and 1.7 <= slope <= 2.5 and seconds < 30
    detail = ", ".join(f"h={h}: {e:.2%}" for h, e in worst.items())
    report_criterion(1, ok, f"max rel error {detail}; rate {slope:.2f}; {seconds:.1f} s")
    assert ok


def test_criterion_02_fem_suite(fixture_meshes, report_criterion):
    rng = np.random.default_rng(2)
    worst = {"null": 0.0, "galerkin": 0.0, "affine": 0.0, "mass": 0.0}
    for m in fixture_meshes.values():
        A, B = fem.assemble_stiffness(m), fem.element_gradients(m)
        worst["null"] = max(worst["null"], np.abs(A @ np.ones(m.n_vertices)).max())
        u = rng.normal(size=m.n_vertices)
        g = np.einsum("mdk,mk->md", B, u[m.triangles])
        energy = np.sum(m.areas * np.sum(g * g, axis=1))
        worst["galerkin"] = max(worst["galerkin"], abs(u @ (A @ u) - energy) / energy)
        a = rng.normal(size=m.dimension)
        g = np.einsum("mdk,mk->md", B, (m.vertices @ a + 0.3)[m.triangles])
        expected = a if m.dimension == 2 else a - (m.normals @ a)[:, None] * m.normals
        worst["affine"] = max(worst["affine"], np.abs(g - expected).max())
        worst["mass"] = max(worst["mass"], abs(fem.assemble_mass(m).sum() - m.total_area))
    ok = worst["null"] <= 1e-12 and worst["galerkin"] <= 1e-10 and worst["affine"] <= 1e-12 and worst["mass"] <= 1e-10
    report_criterion(2, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def _central(f, x, eps=1e-6):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        out[k] = (f(x + e) - f(x - e)) / (2 * eps)
    return out


def test_criterion_03_gradient_exactness(report_criterion):
    worst_p = worst_x = 0.0
    for arch in ([50, 100, 1], [6, 20, 20, 20, 1], [4, 10, 3]):
        r = np.random.default_rng(len(arch))
        m = nn.init_mlp(arch, 11)
        x = r.normal(size=(8, arch[0]))
        target = r.normal(size=(8, arch[-1]))

        def loss(p):
            return np.mean((nn.forward(p, x) - target) ** 2)

        _, g = nn.param_gradients(m, loss)
        flat, gflat = nn.flatten(m.params), nn.flatten(g)
        for i in r.choice(flat.size, size=min(100, flat.size), replace=False):
            def f(v, i=i):
                w = flat.copy()
                w[i] = v[0]
                return float(loss(nn.unflatten(m.params, w)))

            fd = _central(f, [flat[i]])[0]
            worst_p = max(worst_p, abs(fd - gflat[i]) / max(abs(gflat[i]), 1e-3))
        for _ in range(100 // arch[0] + 1):
            xi = r.normal(size=arch[0])
            J = nn.input_jacobian(m, xi)
            for o in range(arch[-1]):
                fd = _central(lambda v: float(np.asarray(m(v))[o]), xi)
                worst_x = max(worst_x, np.max(np.abs(fd - J[o]) / np.maximum(np.abs(J[o]), 1e-3)))
    ok = worst_p <= 1e-5 and worst_x <= 1e-5
    report_criterion(3, ok, f"parameter gradients {worst_p:.1e}, input jacobians {worst_x:.1e} (relative)")
    assert ok


@pytest.mark.slow
def test_criterion_04_coil_eikonal(tmp_path, report_criterion):
    t0 = time.perf_counter()
    scores = []
    for seed in range(3):
        cfg = normalize_config({"experiment": "coil-eikonal", "seed": seed})
        out = tmp_path / f"seed{seed}"
        scores.append(experiments.run_coil(cfg, out)["nmse"])
        if seed == 0:
            _FIRST_RUNS[4] = (cfg, (out / "summary.csv").read_bytes())
    seconds = time.perf_counter() - t0
    med = {arm: float(np.median([s[arm] for s in scores])) for arm in scores[0]}
    gap = min(med["delta-nophysics"], med["pinn"]) / med["delta-pinn"]
    ok = med["delta-pinn"] <= 1e-2 and med["delta-nophysics"] >= 0.3 and med["pinn"] >= 0.3 and gap >= 30 and seconds < 900
    detail = ", ".join(f"{a} {v:.2e}" for a, v in med.items())
    report_criterion(4, ok, f"median NMSE {detail}; gap {gap:.0f}x; {seconds / 60:.1f} min")
    assert ok


def test_criterion_05_oracle_residual(coil, report_criterion):
    from dpinn import pinn

    source = int(np.random.default_rng(0).integers(coil.n_vertices))
    res = pinn.field_eikonal_residual(oracles.geodesic_field(coil, source).distances, coil)
    ok = 5e-3 <= res <= 6e-2
    report_criterion(5, ok, f"fast-marching eikonal residual {res:.2e} on the coil")
    assert ok


@pytest.mark.slow
def test_criterion_06_heatsink(tmp_path, report_criterion):
    t0 = time.perf_counter()
    cfg = normalize_config({"experiment": "heatsink", "seed": 0})
    s = experiments.run_heatsink(cfg, tmp_path)["nmse"]
    _FIRST_RUNS[6] = (cfg, (tmp_path / "summary.csv").read_bytes())
    seconds = time.perf_counter() - t0
    gap = min(s["delta-nophysics"], s["pinn"]) / s["delta-pinn"]
    ok = s["delta-pinn"] <= 1e-2 and gap >= 10 and seconds < 1800
    detail = ", ".join(f"{a} {v:.2e}" for a, v in s.items())
    report_criterion(6, ok, f"NMSE {detail}; gap {gap:.1f}x; {seconds / 60:.1f} min")
    assert ok


# element sizes of the error-vs-h curve (numeric basis, N = 100)
POISSON_H = (0.2, 0.1, 0.066, 0.05, 0.033, 0.02)


@pytest.mark.slow
def test_criterion_07_poisson_sweep(report_criterion):
    cfg = normalize_config({"experiment": "poisson-sweep"})
    train = {k: v for k, v in cfg["train"].items() if k != "n_modes"}
    cell = lambda b, n, h: experiments.poisson_cell(b, n, h, cfg["width"], train, 0)["mse"]  # noqa: E731
    t0 = time.perf_counter()
    pinn_mse = cell("pinn", 0, 0.066)
    numeric = {h: cell("numeric", 100, h) for h in POISSON_H}
    analytic = {h: cell("analytic", 100, h) for h in (0.1, 0.066)}
    seconds = time.perf_counter() - t0
    ok_a = pinn_mse <= 1e-3
    ok_b = numeric[0.066] <= 10 * pinn_mse
    ratios = [max(analytic[h], numeric[h]) / min(analytic[h], numeric[h]) for h in analytic]
    ok_c = max(ratios) <= 3
    best = min(numeric, key=numeric.get)
    ok_d = 0.05 <= best <= 0.12 and best not in (POISSON_H[0], POISSON_H[-1])
    curve = ", ".join(f"{h}: {v:.1e}" for h, v in numeric.items())
    report_criterion("7a", ok_a, f"coordinate PINN MSE {pinn_mse:.2e}")
    report_criterion("7b", ok_b, f"encoded N=100 h=0.066 MSE {numeric[0.066]:.2e} ({numeric[0.066] / pinn_mse:.1f}x PINN)")
    report_criterion("7c", ok_c, "analytic/numeric ratio " + ", ".join(f"h={h}: {r:.1f}" for h, r in zip(analytic, ratios)))
    report_criterion("7d", ok_d, f"minimum at h={best}; curve {curve}; {seconds / 60:.1f} min total")
    assert ok_a and ok_b and ok_c and ok_d


def test_criterion_08_deeponet_identities(report_criterion):
    exact = 0
    for seed in range(1000):
        net = deeponet.init_geodesic_net(6, hidden=(8, 8), latent=5, seed=seed, out_scale=1.0 + seed % 7)
        v1, v2 = np.random.default_rng(seed).normal(size=(2, 3, 6))
        same = np.all(deeponet.predict_distance(net, v1, v1) == 0.0)
        sym = np.array_equal(deeponet.predict_distance(net, v1, v2), deeponet.predict_distance(net, v2, v1))
        exact += bool(same and sym)
    ok = exact == 1000
    report_criterion(8, ok, f"{exact}/1000 parameter draws satisfy both identities bit-exactly")
    assert ok


@pytest.mark.slow
def test_criterion_09_deeponet_sphere(tmp_path, report_criterion):
    t0 = time.perf_counter()
    cfg = normalize_config({"experiment": "bunny-deeponet", "seed": 0})
    s = experiments.run_deeponet(cfg, tmp_path)
    _FIRST_RUNS[9] = (cfg, (tmp_path / "summary.csv").read_bytes())
    seconds = time.perf_counter() - t0
    ok = s["normalized_mae"] <= 0.02 and s["path_fraction"] >= 0.9 and seconds < 1200
    report_criterion(
        9, ok, f"held-out normalized MAE {s['normalized_mae']:.2%}; paths within 5%: {s['path_fraction']:.1%}; {seconds / 60:.1f} min"
    )
    assert ok


@pytest.mark.slow
def test_criterion_10_regression_ordering(tmp_path, report_criterion):
    t0 = time.perf_counter()
    cfg = normalize_config({"experiment": "regression-study", "train_sizes": [100, 500], "nn_modes": [25, 400]})
    med = experiments.run_regression(cfg, tmp_path)["medians"]
    seconds = time.perf_counter() - t0
    ok_gp = all(med[n]["GP"] < min(med[n]["25"], med[n]["400"]) for n in (100, 500))
    ok_modes = med[100]["400"] > med[100]["25"]
    ok = ok_gp and ok_modes and seconds < 1200
    detail = "; ".join(f"n={n}: GP {med[n]['GP']:.1e}, N25 {med[n]['25']:.1e}, N400 {med[n]['400']:.1e}" for n in (100, 500))
    report_criterion(10, ok, f"median MSE {detail}; {seconds / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_11_determinism(tmp_path, report_criterion):
    runners = {4: experiments.run_coil, 6: experiments.run_heatsink, 9: experiments.run_deeponet}
    missing = sorted(set(runners) - set(_FIRST_RUNS))
    if missing:
        pytest.skip(f"criteria {missing} did not run first in this session")
    same = {}
    for k, run in runners.items():
        cfg, first = _FIRST_RUNS[k]
        run(cfg, tmp_path / str(k))
        same[k] = (tmp_path / str(k) / "summary.csv").read_bytes() == first
    ok = all(same.values())
    report_criterion(11, ok, ", ".join(f"criterion {k}: {'identical' if v else 'DIFFERENT'} summary" for k, v in same.items()))
    assert ok

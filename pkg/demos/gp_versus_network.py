"""Smooth regression on a bumpy sphere: spectral Matern GP against an encoded network.

The target is sin(pi d / d_max), with d the geodesic distance from one
vertex. Both models see the same random vertices. The GP kernel and the
network inputs come from the same eigenbasis. With few samples the GP wins,
and the network gets worse when handed too many eigenfunctions.

    python3 demos/gp_versus_network.py
"""

import argparse
import numpy as np

from dpinn import gp, mesh, pinn, spectral

parser = argparse.ArgumentParser()
parser.add_argument("--vertices", type=int, default=2500)
parser.add_argument("--samples", type=int, default=100)
parser.add_argument("--iterations", type=int, default=5000)
args = parser.parse_args()

surf = mesh.generate_sphere(args.vertices, radial=mesh.bumpy_radius())
modes = min(1000, surf.n_vertices - 1)
basis = spectral.laplace_beltrami_basis(surf, modes, dense_below=surf.n_vertices + 1)
target = gp.regression_target(surf, 0)

sel = np.random.default_rng(0).choice(surf.n_vertices, args.samples, replace=False)
fit = gp.gp_fit_predict(basis, sel, target[sel], np.arange(surf.n_vertices), gp.kappa_grid(surf), n_modes=modes)
print(f"GP (kappa {fit.kappa:.3f})   MSE {pinn.mse(fit.mean, target):.2e}")

for n in (9, 25, 100, 400):
    if n > modes:
        break
    cfg = pinn.TrainConfig(n_modes=n, hidden=(100,), iterations=args.iterations, data_batch=32)
    pred = gp.delta_nn_regression(cfg, surf, basis, sel, target[sel])
    print(f"network, {n:3d} modes MSE {pinn.mse(pred, target):.2e}")

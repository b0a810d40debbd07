"""Learn all pairwise geodesic distances on a sphere and trace shortest paths.

Each vertex is encoded by its first 50 Laplace-Beltrami eigenfunctions. An
operator network maps a pair of encodings to a distance and is built so that
d(x, x) = 0 and d(x, y) = d(y, x) hold exactly. Training also asks the
gradient of the prediction to have unit length. Afterwards we follow the
negative gradient across the surface to trace a path. On a sphere its length
should match the great-circle distance.

    python3 demos/sphere_geodesics.py --iterations 8000
"""

import argparse
import numpy as np

from dpinn import deeponet, mesh, oracles, spectral

parser = argparse.ArgumentParser()
parser.add_argument("--iterations", type=int, default=8000)
parser.add_argument("--vertices", type=int, default=1000)
parser.add_argument("--pairs", type=int, default=5000)
args = parser.parse_args()

sphere = mesh.generate_sphere(args.vertices)
P = sphere.vertices
gc = lambda i, j: oracles.great_circle_distance(P[i], P[j])  # noqa: E731

cfg = deeponet.GeodesicConfig(
    n_modes=50, hidden=(100,) * 4, latent=100, iterations=args.iterations, batch=100, decay_rate=0.9, decay_steps=400
)
basis = spectral.laplace_beltrami_basis(sphere, cfg.n_modes)
i, j, d = oracles.pairs_to_arrays(oracles.sample_pairs(sphere, args.pairs + 1000, seed=0, distance=gc))
result = deeponet.train_geodesic(cfg, sphere, basis, (i[: args.pairs], j[: args.pairs], d[: args.pairs]))

V = basis.vectors
pred = result.net(V[i[args.pairs :]], V[j[args.pairs :]])
print(f"held-out normalized MAE: {deeponet.normalized_mae(pred, d[args.pairs:], np.pi):.2%}")

rng = np.random.default_rng(1)
for a, b in rng.choice(sphere.n_vertices, size=(5, 2), replace=False):
    path = deeponet.trace_geodesic(result.net, sphere, basis, int(a), int(b))
    g = float(gc(a, b))
    print(f"{a:4d} -> {b:4d}: traced {path.length:.3f}, great circle {g:.3f}, converged {path.converged}")

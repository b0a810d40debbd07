"""Poisson problem on [-1, 1]^2 with a manufactured solution.

The exact field is u = (x^2 - 1)(y^2 - 1) exp(-(x - y)^2 / 0.25), which
vanishes on the boundary. We compare three ways of feeding the square to a
network: numerically computed eigenfunctions, the closed-form Neumann
eigenfunctions cos(l pi x / 2) cos(m pi y / 2), and plain coordinates.

The closed-form set with l, m >= 1 only contains functions that are even in x
and in y. A network on top of such features can never represent the part of
u that is odd under x -> -x, so its error stalls near the floor printed
below, however long it trains.

    python3 demos/poisson_square.py --iterations 20000
"""

import argparse
import numpy as np

from dpinn import experiments, mesh, oracles

parser = argparse.ArgumentParser()
parser.add_argument("--iterations", type=int, default=20_000)
parser.add_argument("--h", type=float, default=0.066)
parser.add_argument("--modes", type=int, default=100)
args = parser.parse_args()

u, f = oracles.manufactured_poisson(0.5)
sq, _ = mesh.generate_square(args.h)
x, y = sq.vertices.T
values = u(x, y)
# the doubly even part is the average over the four reflections
even = 0.25 * (u(x, y) + u(-x, y) + u(x, -y) + u(-x, -y))
print(f"{sq.n_vertices} vertices; floor for doubly even features: MSE {np.mean((values - even) ** 2):.2e}")

train = dict(hidden=[100, 100, 100], iterations=args.iterations, data_batch=30, pde_batch=30)
for kind in ("numeric", "analytic", "pinn"):
    cell = experiments.poisson_cell(kind, args.modes, args.h, 0.5, train, seed=0)
    print(f"{kind:9s} MSE {cell['mse']:.2e}  ({cell['seconds']:.0f} s)")

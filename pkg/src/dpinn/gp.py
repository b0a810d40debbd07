"""Matérn Gaussian-process regression on meshes and the encoded-input network it is compared with.

The kernel is the truncated spectral series

    k(i, j) = sigma2 / c * sum_n phi(lam_n) v_n(i) v_n(j),
    phi(lam) = (2 nu / kappa^2 + lam) ** -(nu + d/2),

with ``c`` chosen so that the vertex-mean of ``k(i, i)`` equals ``sigma2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesh import TriMesh
from .oracles import geodesic_field
from .pinn import DataSet, TrainConfig, predict_field, train
from .spectral import EigenBasis, TooManyModes


class KernelNotPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralMaternKernel:
    basis: EigenBasis
    kappa: float
    sigma2: float = 1.0
    nu: float = 1.5
    n_modes: int = 1000
    dim: int = 2

    def __post_init__(self):
        if self.basis.n_modes < self.n_modes:
            raise TooManyModes(f"kernel needs {self.n_modes} modes, basis has {self.basis.n_modes}")
        if self.kappa <= 0 or self.sigma2 <= 0 or self.nu <= 0:
            raise ValueError("kappa, sigma2 and nu must be positive")

    @property
    def weights(self) -> np.ndarray:
        lam = np.maximum(self.basis.eigenvalues[: self.n_modes], 0.0)
        phi = (2.0 * self.nu / self.kappa**2 + lam) ** (-self.nu - 0.5 * self.dim)
        V = self.basis.vectors[:, : self.n_modes]
        c = np.mean((V * V) @ phi)
        return self.sigma2 * phi / c

    def matrix(self, rows, cols=None) -> np.ndarray:
        V = self.basis.vectors[:, : self.n_modes]
        w = self.weights
        A = V[np.asarray(rows)] * w
        if cols is None:
            K = A @ V[np.asarray(rows)].T
            # the product is symmetric only up to rounding
            return 0.5 * (K + K.T)
        return A @ V[np.asarray(cols)].T

    def __call__(self, i: int, j: int) -> float:
        return kernel_eval(self, i, j)


def kernel_eval(kernel: SpectralMaternKernel, i: int, j: int) -> float:
    V = kernel.basis.vectors[:, : kernel.n_modes]
    # elementwise products commute, so k(i, j) and k(j, i) sum identical terms
    return float(np.sum(kernel.weights * (V[i] * V[j])))


def _cholesky(K: np.ndarray, jitter: float, max_tries: int = 6):
    scale = float(np.mean(np.diag(K)))
    eye = np.eye(len(K))
    for k in range(max_tries):
        try:
            return scipy.linalg.cho_factor(K + jitter * 10**k * scale * eye, lower=True), jitter * 10**k
        except np.linalg.LinAlgError:
            continue
    raise KernelNotPositiveDefinite(f"kernel not positive definite after jitter {jitter * 10 ** (max_tries - 1):g}")


@dataclass
class GpFit:
    mean: np.ndarray
    kappa: float
    sigma2: float
    noise: float
    log_marginal: float


def kappa_grid(mesh: TriMesh, n: int = 8) -> np.ndarray:
    """Log-spaced lengthscales between 0.05 and 2 bounding-box diagonals."""
    diameter = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    return diameter * np.geomspace(0.05, 2.0, n)


def gp_fit_predict(
    basis: EigenBasis,
    train_vertices,
    train_values,
    test_vertices,
    kappas,
    noise: float = 1e-4,
    nu: float = 1.5,
    n_modes: int = 1000,
) -> GpFit:
    """Posterior mean at ``test_vertices`` with ``kappa`` chosen by marginal likelihood.

    ``noise`` is relative to the signal variance; the variance itself is
    profiled out in closed form. Targets are centered on the training mean.
    """
    X = np.asarray(train_vertices, dtype=np.int64)
    y = np.asarray(train_values, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("no training data")
    offset = y.mean()
    r = y - offset
    n = len(X)
    best = None
    for kappa in np.asarray(kappas, dtype=np.float64):
        kern = SpectralMaternKernel(basis, float(kappa), 1.0, nu, n_modes)
        K = kern.matrix(X) + noise * np.eye(n)
        cho, _ = _cholesky(K, 1e-10)
        alpha = scipy.linalg.cho_solve(cho, r)
        sigma2 = max(float(r @ alpha) / n, 1e-300)
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        lml = -0.5 * n * np.log(sigma2) - 0.5 * logdet - 0.5 * n * (1.0 + np.log(2 * np.pi))
        if best is None or lml > best[0]:
            best = (lml, kern, alpha, sigma2)
    lml, kern, alpha, sigma2 = best
    mean = offset + kern.matrix(np.asarray(test_vertices, dtype=np.int64), X) @ alpha
    return GpFit(mean, kern.kappa, sigma2, noise * sigma2, float(lml))


def regression_target(mesh: TriMesh, source: int) -> np.ndarray:
    """``sin(pi d / d_max)`` for the geodesic distance ``d`` from ``source``."""
    d = geodesic_field(mesh, source).distances
    return np.sin(np.pi * d / d.max())


def delta_nn_regression(config: TrainConfig, mesh: TriMesh, basis: EigenBasis, vertices, values) -> np.ndarray:
    """Physics-free fit of an encoded-input network; returns the field at every vertex."""
    if basis.n_modes < config.n_modes:
        raise TooManyModes(f"basis has {basis.n_modes} modes, config asks for {config.n_modes}")
    sub = basis.head(config.n_modes)
    cfg = TrainConfig(**{**config.to_dict(), "pde_weight": 0.0})
    result = train(cfg, mesh, sub, DataSet(vertices, values))
    return predict_field(result.model, sub)

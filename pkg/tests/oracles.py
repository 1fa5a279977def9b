"""Independent reference computations used to freeze expected test values.

Each oracle avoids the package's importance-pool machinery: quadrature for
k = 2, Sobol quasi-random integration over the simplex for general k, exact
Dirichlet moment formulas, thermodynamic bridging with exact samplers for
extreme intensities, and dense grid search for the simplex minimizer.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp
from scipy.stats import qmc


def dirichlet_mean_homozygosity(theta_total: float, k: int) -> float:
    """E[sum X_i^2] for the symmetric Dirichlet: (theta + k) / (k (theta + 1))."""
    return (theta_total + k) / (k * (theta_total + 1.0))


def dirichlet_second_moment(alpha_i: float, alpha_0: float) -> float:
    """E[X_i^2] = a_i (a_i + 1) / (a_0 (a_0 + 1))."""
    return alpha_i * (alpha_i + 1.0) / (alpha_0 * (alpha_0 + 1.0))


def dirichlet_cross_moment(alpha_i: float, alpha_j: float, alpha_0: float) -> float:
    """E[X_i X_j], i != j."""
    return alpha_i * alpha_j / (alpha_0 * (alpha_0 + 1.0))


def log_normalizer_quadrature_k2(theta_total: float, sigma: float) -> float:
    """ln E[exp(-sigma H)] for k = 2 via adaptive 1-d quadrature."""
    a = theta_total / 2.0
    logc = gammaln(theta_total) - 2.0 * gammaln(a)

    def f(x):
        h = x * x + (1.0 - x) * (1.0 - x)
        return math.exp(-sigma * h + (a - 1.0) * math.log(x * (1.0 - x)) + logc)

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=200)
    return math.log(val)


def uniform_simplex_sobol(k: int, m_pow: int, seed: int = 9) -> np.ndarray:
    """2**m_pow quasi-random points uniform on the (k-1)-simplex (sorted gaps)."""
    eng = qmc.Sobol(d=k - 1, scramble=True, seed=seed)
    u = eng.random(2**m_pow)
    u.sort(axis=1)
    pad = np.zeros((u.shape[0], 1))
    x = np.diff(np.concatenate([pad, u, pad + 1.0], axis=1), axis=1)
    return np.clip(x, 1e-300, None)


def log_normalizer_qmc(theta_total: float, k: int, sigma: float, m_pow: int = 21) -> float:
    """ln E[exp(-sigma H)] by Sobol integration against the neutral density."""
    x = uniform_simplex_sobol(k, m_pow)
    a = theta_total / k
    h = np.einsum("ij,ij->i", x, x)
    lw = (a - 1.0) * np.log(x).sum(axis=1) - sigma * h
    logc = gammaln(theta_total) - k * gammaln(a) - gammaln(k)  # /Gamma(k): uniform density
    return float(logsumexp(lw) - math.log(x.shape[0]) + logc)


def selection_cdf_qmc(theta_total: float, k: int, sigma: float, h_cut: float, m_pow: int = 21) -> float:
    """P(H <= h | sigma) by Sobol integration of the tilted density ratio."""
    x = uniform_simplex_sobol(k, m_pow)
    a = theta_total / k
    h = np.einsum("ij,ij->i", x, x)
    lw = (a - 1.0) * np.log(x).sum(axis=1) - sigma * h
    w = np.exp(lw - lw.max())
    return float((w * (h <= h_cut)).sum() / w.sum())


def log_normalizer_bridge(theta, sigma_target: float, sample_fn, steps: int = 12, n: int = 30_000, seed: int = 1000) -> float:
    """ln E[exp(-sigma H)] by thermodynamic bridging with exact samplers.

    ``sample_fn(theta, sigma, n, seed)`` must return draws as an (n, k)
    array distributed per the selected stationary law at that intensity.
    """
    sigmas = np.linspace(0.0, sigma_target, steps + 1)
    total = 0.0
    for j in range(steps):
        draws = sample_fn(theta, float(sigmas[j]), n, seed + j)
        h = np.einsum("ij,ij->i", draws, draws)
        total += float(logsumexp(-(sigmas[j + 1] - sigmas[j]) * h) - math.log(n))
    return total


def min_quadratic_form_grid_k2(matrix: np.ndarray, resolution: float = 1e-4) -> float:
    """Exhaustive grid minimum of x' S x on the 1-simplex."""
    t = np.arange(0.0, 1.0 + resolution / 2, resolution)
    x = np.stack([t, 1.0 - t], axis=1)
    vals = np.einsum("ij,jl,il->i", x, matrix, x)
    return float(vals.min())

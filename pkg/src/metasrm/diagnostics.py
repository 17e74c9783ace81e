"""Distances between Gaussian priors and brute-force oracles used by the tests."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, linalg, special, stats

from .core import PreconditionError
from .posteriors import GaussianBelief


@dataclass(frozen=True)
class DistanceReport:
    kl: float
    pinsker_tv_bound: float
    exact_tv: Optional[float] = None


def gaussian_kl(p: GaussianBelief, q: GaussianBelief) -> float:
    """KL(p || q) for multivariate normals."""
    if p.dim != q.dim:
        raise PreconditionError("dimension mismatch")
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.covariance, q.covariance):
        return 0.0
    try:
        cq = linalg.cho_factor(q.covariance, lower=True)
        cp = linalg.cho_factor(p.covariance, lower=True)
    except linalg.LinAlgError as exc:
        raise PreconditionError("KL needs positive definite covariances") from exc
    d = p.dim
    diff = q.mean - p.mean
    trace = np.trace(linalg.cho_solve(cq, p.covariance))
    maha = diff @ linalg.cho_solve(cq, diff)
    logdet = 2.0 * (np.log(np.diag(cq[0])).sum() - np.log(np.diag(cp[0])).sum())
    return float(max(0.5 * (trace - d + maha + logdet), 0.0))


def _isotropic_scale(cov: np.ndarray) -> Optional[float]:
    s = cov[0, 0]
    if s > 0 and np.array_equal(cov, s * np.eye(cov.shape[0])):
        return math.sqrt(s)
    return None


def tv_report(p: GaussianBelief, q: GaussianBelief) -> DistanceReport:
    """KL, the Pinsker bound on TV, and exact TV when both covariances equal sigma0^2 I."""
    kl = gaussian_kl(p, q)
    bound = min(1.0, math.sqrt(kl / 2.0))
    exact = None
    s = _isotropic_scale(p.covariance)
    if s is not None and np.array_equal(p.covariance, q.covariance):
        gap = float(np.linalg.norm(p.mean - q.mean))
        exact = math.erf(gap / (2.0 * math.sqrt(2.0) * s))
    return DistanceReport(kl, bound, exact)


def pinsker_prior_error(theta_hat, theta_star, sigma0: float) -> float:
    """||theta_hat - theta_star|| / (2 sigma0): the Pinsker TV bound for isotropic priors."""
    return float(np.linalg.norm(np.asarray(theta_hat) - np.asarray(theta_star)) / (2.0 * sigma0))


def brute_force_gaussian_posterior(prior: GaussianBelief, observations: Sequence[tuple], sigma: float,
                                   method: str = "batch", grid_points: int = 20001) -> GaussianBelief:
    """Posterior after all (feature, reward) observations at once.

    ``batch`` uses the stacked-design Woodbury form (d <= 5); ``grid`` evaluates
    the unnormalised posterior density on a dense grid (d == 1).
    """
    d = prior.dim
    if method == "grid":
        if d != 1:
            raise PreconditionError("grid oracle is one-dimensional")
        return _grid_posterior(prior, observations, sigma, grid_points)
    if d > 5:
        raise PreconditionError("batch oracle limited to d <= 5")
    if len(observations) == 0:
        return prior
    X = np.array([np.atleast_1d(np.asarray(a, dtype=float)) for a, _ in observations])
    y = np.array([float(r) for _, r in observations])
    S = prior.covariance
    innov = X @ S @ X.T + sigma**2 * np.eye(len(y))
    gain = np.linalg.solve(innov, X @ S).T
    mean = prior.mean + gain @ (y - X @ prior.mean)
    cov = S - gain @ X @ S
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def _grid_posterior(prior, observations, sigma, points):
    m0 = float(prior.mean[0])
    s0 = math.sqrt(float(prior.covariance[0, 0]))
    if s0 == 0:
        return prior
    grid = np.linspace(m0 - 12 * s0, m0 + 12 * s0, points)
    logp = stats.norm.logpdf(grid, m0, s0)
    for a, r in observations:
        a = float(np.atleast_1d(a)[0])
        logp = logp + stats.norm.logpdf(float(r), a * grid, sigma)
    w = np.exp(logp - logp.max())
    z = integrate.simpson(w, x=grid)
    mean = integrate.simpson(w * grid, x=grid) / z
    var = integrate.simpson(w * (grid - mean) ** 2, x=grid) / z
    return GaussianBelief([mean], [[var]])


def beta_binomial_pmf(alpha: float, beta: float, t0: int) -> np.ndarray:
    x = np.arange(t0 + 1)
    logp = (special.gammaln(t0 + 1) - special.gammaln(x + 1) - special.gammaln(t0 - x + 1)
            + special.betaln(x + alpha, t0 - x + beta) - special.betaln(alpha, beta))
    return np.exp(logp)


def beta_binomial_moment_oracle(alpha: float, beta: float, t0: int) -> tuple[float, float]:
    """(E[X], E[X^2]) of Beta-Binomial(alpha, beta, t0) by summing the pmf."""
    if alpha <= 0 or beta <= 0 or t0 < 1:
        raise PreconditionError("need alpha, beta > 0 and t0 >= 1")
    pmf = beta_binomial_pmf(alpha, beta, t0)
    x = np.arange(t0 + 1)
    return float(pmf @ x), float(pmf @ (x * x))


def beta_binomial_moments_closed_form(alpha: float, beta: float, t0: int) -> tuple[float, float]:
    s = alpha + beta
    m1 = t0 * alpha / s
    m2 = t0 * alpha * (t0 * (1 + alpha) + beta) / (s * (1 + s))
    return m1, m2

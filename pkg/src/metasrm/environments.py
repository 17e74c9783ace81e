"""Generative model: meta-prior -> prior -> task -> rewards."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import ArmSet, PreconditionError, TaskInstance

PSD_TOL = 1e-10


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def psd_factor(cov: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Symmetric square root L (L @ L.T == cov) via eigendecomposition.

    Works for singular covariances. Eigenvalues in (-1e-10, 0) are clamped to
    zero; anything more negative is an error. For a diagonal ``cov`` the root
    is diag(sqrt(cov_ii)), so draws match a per-coordinate sampler.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise PreconditionError(f"{name} must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=PSD_TOL, rtol=0):
        raise PreconditionError(f"{name} is not symmetric")
    w, v = np.linalg.eigh(symmetrize(cov))
    if w.size and w.min() < -PSD_TOL:
        raise PreconditionError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sample_mvn(mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator, size=None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    factor = psd_factor(cov)
    if size is None:
        return mean + factor @ rng.standard_normal(mean.size)
    z = rng.standard_normal((size, mean.size))
    return mean + z @ factor.T


def _check_cov(cov, dim: int, name: str) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (dim, dim):
        raise PreconditionError(f"{name} must be {dim}x{dim}, got {cov.shape}")
    psd_factor(cov, name)
    cov = symmetrize(cov)
    cov.setflags(write=False)
    return cov


@dataclass(frozen=True)
class GaussianPriorSpec:
    """Task prior N(theta_star, Sigma0) with reward noise sigma."""

    theta_star: np.ndarray
    Sigma0: np.ndarray
    sigma: float
    arms: ArmSet

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        if theta.size != self.arms.dim:
            raise PreconditionError(f"theta_star has length {theta.size}, arms need {self.arms.dim}")
        if not self.sigma > 0:
            raise PreconditionError("noise sigma must be positive")
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "Sigma0", _check_cov(self.Sigma0, theta.size, "Sigma0"))

    @property
    def dim(self) -> int:
        return self.theta_star.size


@dataclass(frozen=True)
class GaussianMetaPriorSpec:
    """Meta-prior N(psi_q, Sigma_q) over theta_star."""

    psi_q: np.ndarray
    Sigma_q: np.ndarray

    def __post_init__(self):
        psi = np.atleast_1d(np.asarray(self.psi_q, dtype=float))
        psi.setflags(write=False)
        object.__setattr__(self, "psi_q", psi)
        object.__setattr__(self, "Sigma_q", _check_cov(self.Sigma_q, psi.size, "Sigma_q"))

    @property
    def dim(self) -> int:
        return self.psi_q.size


@dataclass(frozen=True)
class BetaPriorSpec:
    """Product of per-arm Beta(alpha_a, beta_a) priors over Bernoulli means."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        b = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if a.shape != b.shape:
            raise PreconditionError("alpha and beta differ in length")
        if np.any(a <= 0) or np.any(b <= 0):
            raise PreconditionError("Beta parameters must be positive")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def n_arms(self) -> int:
        return self.alpha.size


def sample_prior_from_meta(meta: GaussianMetaPriorSpec, Sigma0, arms: ArmSet, sigma: float,
                           rng: np.random.Generator) -> GaussianPriorSpec:
    theta = sample_mvn(meta.psi_q, meta.Sigma_q, rng)
    return GaussianPriorSpec(theta, Sigma0, sigma, arms)


def sample_task(prior: Union[GaussianPriorSpec, BetaPriorSpec], rng: np.random.Generator) -> TaskInstance:
    if isinstance(prior, BetaPriorSpec):
        return TaskInstance(rng.beta(prior.alpha, prior.beta), "bernoulli")
    mu = sample_mvn(prior.theta_star, prior.Sigma0, rng)
    if prior.arms.is_basis:
        return TaskInstance(mu, "gaussian", prior.sigma)
    return TaskInstance.linear(prior.arms, mu, prior.sigma)


def sample_reward(task: TaskInstance, arm: int, rng: np.random.Generator) -> float:
    if not 0 <= arm < task.n_arms:
        raise PreconditionError(f"arm {arm} out of range")
    if task.noise == "bernoulli":
        return float(rng.random() < task.means[arm])
    return float(task.means[arm] + task.sigma * rng.standard_normal())


def sphere_arms(k: int, d: int, rng: np.random.Generator) -> ArmSet:
    """K arms drawn uniformly from the unit sphere in R^d."""
    x = rng.standard_normal((k, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    # renormalisation can land a hair above 1
    x /= np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1.0)
    return ArmSet.from_features(x)


def block_covariance(n_blocks: int = 2, block_size: int = 3, variance: float = 0.05,
                     correlation: float = 0.95) -> np.ndarray:
    """Block-diagonal covariance with strongly correlated arms inside each block."""
    block = variance * ((1 - correlation) * np.eye(block_size) + correlation * np.ones((block_size, block_size)))
    return np.kron(np.eye(n_blocks), block)

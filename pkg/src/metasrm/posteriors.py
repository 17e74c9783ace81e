"""Conjugate updates: within-task Gaussian, cross-task meta-posterior, Beta-Bernoulli."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import ArmSet, PreconditionError, Trajectory
from .environments import GaussianMetaPriorSpec, PSD_TOL, symmetrize


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise PreconditionError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T, atol=PSD_TOL, rtol=0):
            raise PreconditionError("covariance is not symmetric")
        cov = symmetrize(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_diagonal(self) -> bool:
        c = self.covariance
        return not np.any(c - np.diag(np.diag(c)))


@dataclass(frozen=True)
class BetaBelief:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        b = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if a.shape != b.shape or np.any(a <= 0) or np.any(b <= 0):
            raise PreconditionError("Beta belief needs positive (alpha, beta) of equal length")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @classmethod
    def uniform(cls, k: int) -> "BetaBelief":
        return cls(np.ones(k), np.ones(k))


@dataclass(frozen=True)
class TaskSummary:
    """Sufficient statistics of one finished task: Gram matrix V and sum of a*y."""

    V: np.ndarray
    B: np.ndarray

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory, arms: ArmSet) -> "TaskSummary":
        if arms.is_basis:
            V = np.diag(trajectory.pull_counts.astype(float))
            B = np.bincount(trajectory.arms, weights=trajectory.rewards, minlength=arms.count)
            return cls(V, B)
        X = arms.features[trajectory.arms]
        return cls(X.T @ X, X.T @ trajectory.rewards)


@dataclass(frozen=True)
class MetaPosteriorState:
    """Gaussian meta-posterior over theta_star, stored in natural parameters.

    ``precision`` is the inverse covariance and ``natural`` the precision-weighted
    mean; ``n_tasks`` counts the folded-in tasks.
    """

    precision: np.ndarray
    natural: np.ndarray
    n_tasks: int = 0

    @classmethod
    def from_meta_prior(cls, meta: GaussianMetaPriorSpec) -> "MetaPosteriorState":
        try:
            chol = linalg.cho_factor(meta.Sigma_q, lower=True)
        except linalg.LinAlgError as exc:
            raise PreconditionError("meta-prior covariance must be positive definite") from exc
        precision = symmetrize(linalg.cho_solve(chol, np.eye(meta.dim)))
        natural = linalg.cho_solve(chol, meta.psi_q)
        return cls(precision, natural, 0)

    @property
    def covariance(self) -> np.ndarray:
        chol = linalg.cho_factor(self.precision, lower=True)
        return symmetrize(linalg.cho_solve(chol, np.eye(self.precision.shape[0])))

    @property
    def theta_hat(self) -> np.ndarray:
        return linalg.cho_solve(linalg.cho_factor(self.precision, lower=True), self.natural)


def within_task_update(belief: GaussianBelief, a, y: float, sigma: float) -> GaussianBelief:
    """Condition a Gaussian belief on one observation y ~ N(a^T mu, sigma^2).

    Covariance (Kalman) form, so singular prior covariances are fine.
    """
    if not sigma > 0:
        raise PreconditionError("sigma must be positive")
    a = np.asarray(a, dtype=float)
    if a.size != belief.dim:
        raise PreconditionError("feature dimension mismatch")
    S = belief.covariance
    Sa = S @ a
    denom = sigma * sigma + a @ Sa
    mean = belief.mean + Sa * ((y - a @ belief.mean) / denom)
    cov = symmetrize(S - np.outer(Sa, Sa) / denom)
    return GaussianBelief(mean, cov)


def update_on_trajectory(belief: GaussianBelief, trajectory: Trajectory, arms: ArmSet,
                         sigma: float) -> GaussianBelief:
    for arm, y in zip(trajectory.arms, trajectory.rewards):
        belief = within_task_update(belief, arms.feature(int(arm)), float(y), sigma)
    return belief


def meta_increments(summary: TaskSummary, Sigma0: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Precision and natural-parameter increments contributed by one task.

    With G = V/sigma^2 the precision increment G - G (Sigma0^-1 + G)^-1 G equals
    (I + G Sigma0)^-1 G, and the natural increment equals (I + G Sigma0)^-1 B/sigma^2.
    That form never inverts Sigma0, which may be singular.
    """
    s2 = sigma * sigma
    G = np.asarray(summary.V, dtype=float) / s2
    b = np.asarray(summary.B, dtype=float) / s2
    M = np.eye(G.shape[0]) + G @ np.asarray(Sigma0, dtype=float)
    sol = np.linalg.solve(M, np.column_stack([G, b]))
    return symmetrize(sol[:, :-1]), sol[:, -1]


def meta_posterior_update(state: MetaPosteriorState, summary: TaskSummary, Sigma0, sigma: float) -> MetaPosteriorState:
    d_prec, d_nat = meta_increments(summary, Sigma0, sigma)
    return MetaPosteriorState(symmetrize(state.precision + d_prec), state.natural + d_nat, state.n_tasks + 1)


def uncertainty_adjusted_prior(state: MetaPosteriorState, Sigma0) -> GaussianBelief:
    """Marginal prior of the next task's means: N(theta_hat, Sigma_hat + Sigma0)."""
    chol = linalg.cho_factor(state.precision, lower=True)
    d = state.precision.shape[0]
    cov = symmetrize(linalg.cho_solve(chol, np.eye(d)))
    mean = linalg.cho_solve(chol, state.natural)
    return GaussianBelief(mean, cov + np.asarray(Sigma0, dtype=float))


def beta_update(belief: BetaBelief, arm: int, reward) -> BetaBelief:
    if reward not in (0, 1):
        raise PreconditionError(f"Bernoulli reward must be 0 or 1, got {reward!r}")
    a = belief.alpha.copy()
    b = belief.beta.copy()
    a[arm] += reward
    b[arm] += 1 - reward
    return BetaBelief(a, b)

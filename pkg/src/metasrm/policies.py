"""Per-task base algorithms: Thompson sampling and BayesUCB."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import ArmSet, PreconditionError, TaskInstance, Trajectory, recommend_by_pull_frequency
from .environments import psd_factor
from .posteriors import BetaBelief, GaussianBelief

PolicyState = Union[GaussianBelief, BetaBelief]


@dataclass(frozen=True)
class PolicyKind:
    """``thompson`` or ``bayes-ucb``; ``delta`` only matters for the latter.

    ``sampled_mean`` swaps the posterior mean in the UCB index for a posterior draw.
    """

    tag: str = "thompson"
    delta: float = 0.1
    sampled_mean: bool = False

    def __post_init__(self):
        if self.tag not in ("thompson", "bayes-ucb"):
            raise PreconditionError(f"unknown policy {self.tag!r}")
        if not 0 < self.delta <= 1:
            raise PreconditionError("delta must lie in (0, 1]")

    @classmethod
    def thompson(cls) -> "PolicyKind":
        return cls("thompson")

    @classmethod
    def bayes_ucb(cls, delta: float = 0.1, sampled_mean: bool = False) -> "PolicyKind":
        return cls("bayes-ucb", delta, sampled_mean)


def _arm_variances(cov: np.ndarray, arms: ArmSet) -> np.ndarray:
    if arms.is_basis:
        return np.diag(cov).copy()
    X = arms.features
    return np.einsum("kd,de,ke->k", X, cov, X)


def ts_select(state: PolicyState, arms: ArmSet, rng: np.random.Generator) -> int:
    """One posterior draw, then the lowest-index argmax arm."""
    if isinstance(state, BetaBelief):
        return int(np.argmax(rng.beta(state.alpha, state.beta)))
    draw = state.mean + psd_factor(state.covariance) @ rng.standard_normal(state.dim)
    if arms.is_basis:
        return int(np.argmax(draw))
    return int(np.argmax(arms.features @ draw))


def mutual_information_gain(belief: GaussianBelief, a, sigma: float) -> float:
    """Information about the means carried by one observation of arm feature ``a``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * math.log1p(float(a @ belief.covariance @ a) / sigma**2)


def _gamma(max_var: float, sigma: float, n_arms: int, delta: float) -> float:
    if not max_var > 0:
        raise PreconditionError("zero posterior variance: confidence width undefined")
    return 4.0 * math.sqrt(max_var / math.log1p(max_var / sigma**2) * math.log(4 * n_arms / delta))


def gamma_coefficient(belief: GaussianBelief, arms: ArmSet, sigma: float, delta: float) -> float:
    """BayesUCB confidence multiplier from the largest per-arm posterior variance."""
    if not 0 < delta <= 1:
        raise PreconditionError("delta must lie in (0, 1]")
    return _gamma(float(_arm_variances(belief.covariance, arms).max()), sigma, arms.count, delta)


def _ucb_index(means: np.ndarray, variances: np.ndarray, sigma: float, n_arms: int, delta: float) -> np.ndarray:
    try:
        g = _gamma(float(variances.max()), sigma, n_arms, delta)
    except PreconditionError:
        return means
    return means + g * np.sqrt(0.5 * np.log1p(np.clip(variances, 0, None) / sigma**2))


def bayes_ucb_select(state: PolicyState, arms: ArmSet, sigma: float, delta: float,
                     rng: Optional[np.random.Generator] = None) -> int:
    """Argmax of posterior mean plus Gamma * sqrt(information gain).

    Falls back to the posterior mean when the posterior has collapsed. Passing
    ``rng`` uses a posterior draw in place of the mean.
    """
    if not isinstance(state, GaussianBelief):
        raise PreconditionError("BayesUCB is implemented for Gaussian beliefs only")
    centre = state.mean
    if rng is not None:
        centre = centre + psd_factor(state.covariance) @ rng.standard_normal(state.dim)
    means = centre if arms.is_basis else arms.features @ centre
    idx = _ucb_index(means, _arm_variances(state.covariance, arms), sigma, arms.count, delta)
    return int(np.argmax(idx))


def _check_run(n: int, forced: Sequence[int], k: int) -> np.ndarray:
    if n < 1:
        raise PreconditionError("horizon n must be >= 1")
    forced = np.asarray(forced, dtype=np.int64).ravel()
    if forced.size > n:
        raise PreconditionError("more forced pulls than rounds")
    if forced.size and (forced.min() < 0 or forced.max() >= k):
        raise PreconditionError("forced arm out of range")
    return forced


def run_task(policy: PolicyKind, start_belief: PolicyState, task: TaskInstance, n: int,
             rng: np.random.Generator, arms: Optional[ArmSet] = None,
             forced_arms: Sequence[int] = (), diagonal_fast_path: bool = True) -> tuple[Trajectory, int]:
    """Play ``n`` rounds of one task and recommend an arm by pull frequency.

    The first ``len(forced_arms)`` rounds pull the given arms; the belief is
    still updated on them. Randomness is drawn in a fixed order (posterior
    noise block, reward noise block, recommendation), so a seed replays exactly.
    """
    traj = play(policy, start_belief, task, n, rng, arms, forced_arms, diagonal_fast_path)
    return traj, recommend_by_pull_frequency(traj, rng)


def play(policy: PolicyKind, start_belief: PolicyState, task: TaskInstance, n: int,
         rng: np.random.Generator, arms: Optional[ArmSet] = None,
         forced_arms: Sequence[int] = (), diagonal_fast_path: bool = True) -> Trajectory:
    """The interaction part of :func:`run_task`, without the recommendation."""
    arms = ArmSet.finite(task.n_arms) if arms is None else arms
    if arms.count != task.n_arms:
        raise PreconditionError("arm set and task disagree on K")
    forced = _check_run(n, forced_arms, arms.count)
    if isinstance(start_belief, BetaBelief):
        if policy.tag != "thompson":
            raise PreconditionError("BayesUCB is implemented for Gaussian beliefs only")
        pulled, rewards = _run_beta(start_belief, task, n, rng, forced)
    else:
        if task.noise != "gaussian":
            raise PreconditionError("Gaussian belief needs a Gaussian-noise task")
        if start_belief.dim != arms.dim:
            raise PreconditionError("belief dimension does not match arm features")
        if diagonal_fast_path and arms.is_basis and start_belief.is_diagonal():
            pulled, rewards = _run_gaussian_diag(policy, start_belief, task, n, rng, forced)
        else:
            pulled, rewards = _run_gaussian_dense(policy, start_belief, task, arms, n, rng, forced)
    return Trajectory(pulled, rewards, arms.count)


def _run_beta(belief: BetaBelief, task, n, rng, forced):
    a = belief.alpha.copy()
    b = belief.beta.copy()
    u = rng.random(n)
    pulled = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    for t in range(n):
        arm = int(forced[t]) if t < forced.size else int(np.argmax(rng.beta(a, b)))
        y = float(u[t] < task.means[arm])
        a[arm] += y
        b[arm] += 1.0 - y
        pulled[t] = arm
        rewards[t] = y
    return pulled, rewards


def _run_gaussian_diag(policy, belief, task, n, rng, forced):
    k = belief.dim
    m = belief.mean.copy()
    v = np.diag(belief.covariance).copy()
    s2 = task.sigma**2
    z = rng.standard_normal((n, k))
    e = rng.standard_normal(n)
    ucb = policy.tag == "bayes-ucb"
    pulled = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    for t in range(n):
        if t < forced.size:
            arm = int(forced[t])
        elif ucb:
            centre = m + np.sqrt(v) * z[t] if policy.sampled_mean else m
            arm = int(np.argmax(_ucb_index(centre, v, task.sigma, k, policy.delta)))
        else:
            arm = int(np.argmax(m + np.sqrt(v) * z[t]))
        y = task.means[arm] + task.sigma * e[t]
        denom = s2 + v[arm]
        m[arm] += v[arm] * (y - m[arm]) / denom
        v[arm] -= v[arm] * v[arm] / denom
        pulled[t] = arm
        rewards[t] = y
    return pulled, rewards


def _run_gaussian_dense(policy, belief, task, arms, n, rng, forced):
    X = arms.matrix()
    d = belief.dim
    m = belief.mean.copy()
    S = belief.covariance.copy()
    s2 = task.sigma**2
    z = rng.standard_normal((n, d))
    e = rng.standard_normal(n)
    ucb = policy.tag == "bayes-ucb"
    pulled = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    for t in range(n):
        if t < forced.size:
            arm = int(forced[t])
        elif ucb:
            centre = m + psd_factor(S) @ z[t] if policy.sampled_mean else m
            var = np.einsum("kd,de,ke->k", X, S, X)
            arm = int(np.argmax(_ucb_index(X @ centre, var, task.sigma, arms.count, policy.delta)))
        else:
            arm = int(np.argmax(X @ (m + psd_factor(S) @ z[t])))
        a = X[arm]
        y = task.means[arm] + task.sigma * e[t]
        Sa = S @ a
        denom = s2 + a @ Sa
        m = m + Sa * ((y - a @ m) / denom)
        S = S - np.outer(Sa, Sa) / denom
        S = 0.5 * (S + S.T)
        pulled[t] = arm
        rewards[t] = y
    return pulled, rewards

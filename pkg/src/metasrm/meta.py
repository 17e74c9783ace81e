"""Meta-learners: Bayesian (meta-posterior) and frequentist (explore, estimate, commit).

Every learner walks a task sequence and appends one ledger row per task. The
``rng`` argument is either one Generator shared across tasks or a callable
``task_index -> Generator`` (the harness passes the latter so that each task
gets its own counter-keyed stream).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (ArmSet, PreconditionError, RegretLedger, TaskInstance, Trajectory,
                   concat_trajectories, recommend_by_pull_frequency, task_fingerprint)
from .environments import GaussianMetaPriorSpec, GaussianPriorSpec
from .posteriors import (BetaBelief, GaussianBelief, MetaPosteriorState, TaskSummary,
                         meta_posterior_update, uncertainty_adjusted_prior, update_on_trajectory)
from .policies import PolicyKind, PolicyState, gamma_coefficient, play

RngSource = Union[np.random.Generator, Callable[[int], np.random.Generator]]


def _task_rng(rng: RngSource, s: int) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else rng(s)


@dataclass
class RunContext:
    """Where rows go and how they are labelled."""

    ledger: RegretLedger = field(default_factory=RegretLedger)
    replication: int = 0
    agent: str = "agent"
    first_task: int = 1

    def record(self, s: int, task: TaskInstance, traj: Trajectory, rec: int) -> None:
        self.ledger.record(self.replication, self.first_task + s, self.agent, task, traj, rec,
                           task_fingerprint(task))


@dataclass(frozen=True)
class ExploreStrategy:
    """How f-metaSRM spends exploration rounds.

    ``bernoulli-batched``: in the first m0 tasks (split into K equal batches)
    pull the batch's arm ``t0`` times. ``linear-basis``: pull each of d
    spanning arms once in each of the first m0 tasks.
    """

    tag: str = "none"
    m0: int = 0
    t0: int = 2

    def __post_init__(self):
        if self.tag not in ("bernoulli-batched", "linear-basis", "none"):
            raise PreconditionError(f"unknown exploration strategy {self.tag!r}")
        if self.m0 < 0:
            raise PreconditionError("m0 must be non-negative")
        if self.tag == "bernoulli-batched" and self.t0 < 2:
            raise PreconditionError("Bernoulli exploration needs t0 >= 2")


@dataclass(frozen=True)
class PriorEstimate:
    """Estimated prior parameters: per-arm Beta pairs, or a Gaussian mean."""

    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    fallback_arms: tuple = ()

    def __post_init__(self):
        if self.theta is None and (self.alpha is None or self.beta is None):
            raise PreconditionError("estimate needs theta or (alpha, beta)")
        if self.alpha is not None and (np.any(self.alpha <= 0) or np.any(self.beta <= 0)):
            raise PreconditionError("Beta estimates must be positive")
        if self.theta is not None and not np.all(np.isfinite(self.theta)):
            raise PreconditionError("non-finite Gaussian estimate")

    def belief(self, Sigma0=None) -> PolicyState:
        if self.theta is not None:
            return GaussianBelief(self.theta, Sigma0)
        return BetaBelief(self.alpha, self.beta)


class ExplorationDataset:
    """Append-only (task, arm, reward) triples gathered in exploration rounds."""

    def __init__(self):
        self._chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    def append(self, task: int, arm: int, reward: float) -> None:
        self._chunks.append((np.array([task]), np.array([arm]), np.array([reward], dtype=float)))

    def extend(self, tasks, arms, rewards) -> None:
        tasks, arms, rewards = (np.asarray(x).ravel() for x in (tasks, arms, rewards))
        if not tasks.shape == arms.shape == rewards.shape:
            raise PreconditionError("columns differ in length")
        self._chunks.append((tasks.astype(np.int64), arms.astype(np.int64), rewards.astype(float)))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._chunks:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        tasks, arms, rewards = (np.concatenate(c) for c in zip(*self._chunks))
        self._chunks = [(tasks, arms, rewards)]
        return tasks, arms, rewards

    def __len__(self) -> int:
        return sum(c[0].size for c in self._chunks)


# -- estimators ---------------------------------------------------------------


def beta_from_moments(m1: float, m2: float, t0: int) -> Optional[tuple[float, float]]:
    """Invert the Beta-Binomial(alpha, beta, t0) first/second moments.

    From E[X] = t0 p with p = alpha / (alpha + beta) and the second moment,
    alpha + beta = (t0 m1 - m2) / (m2 - m1 (m1 + 1 - m1 / t0)).
    Returns None if the moments admit no Beta solution (no overdispersion).
    """
    p = m1 / t0
    denom = m2 - m1 * (m1 + 1.0 - p)
    numer = t0 * m1 - m2
    if not (0 < p < 1) or denom <= 0 or numer <= 0:
        return None
    total = numer / denom
    return p * total, (1.0 - p) * total


def mom_estimate_beta(data: ExplorationDataset, t0: int, k: int, allow_missing: bool = False) -> PriorEstimate:
    """Method-of-moments Beta prior per arm from t0-pull exploration sums.

    Arms whose empirical moments are infeasible fall back to Beta(1, 1); their
    indices are listed in ``fallback_arms``. With ``allow_missing`` arms with
    fewer than two exploration tasks also fall back instead of raising.
    """
    if t0 < 2:
        raise PreconditionError("t0 must be >= 2")
    tasks, arms, rewards = data.arrays()
    alpha = np.ones(k)
    beta = np.ones(k)
    fallback = []
    if tasks.size:
        if arms.min() < 0 or arms.max() >= k:
            raise PreconditionError("arm index out of range")
        keys, inverse = np.unique(tasks * k + arms, return_inverse=True)
        sums = np.bincount(inverse, weights=rewards)
        pulls = np.bincount(inverse)
        if np.any(pulls != t0):
            raise PreconditionError(f"every (task, arm) exploration block must hold exactly t0={t0} pulls")
        group_arm = keys % k
    else:
        sums = pulls = group_arm = np.zeros(0)
    for a in range(k):
        x = sums[group_arm == a]
        if x.size < 2:
            if not allow_missing:
                raise PreconditionError(f"arm {a} has {x.size} exploration tasks, need >= 2")
            fallback.append(a)
            continue
        est = beta_from_moments(float(x.mean()), float((x * x).mean()), t0)
        if est is None:
            fallback.append(a)
        else:
            alpha[a], beta[a] = est
    return PriorEstimate(alpha=alpha, beta=beta, fallback_arms=tuple(fallback))


def ols_estimate_theta(data: ExplorationDataset, basis, m0: Optional[int] = None) -> PriorEstimate:
    """Least-squares prior mean from m0 tasks that each pulled every basis arm once.

    Arms in ``data`` index into ``basis`` (rows are the d basis features).
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    d = basis.shape[1]
    if basis.shape[0] != d or np.linalg.matrix_rank(basis) < d:
        raise PreconditionError("basis must be d vectors spanning R^d")
    tasks, arms, rewards = data.arrays()
    n_tasks = np.unique(tasks).size
    m0 = n_tasks if m0 is None else m0
    if m0 < 1 or m0 != n_tasks:
        raise PreconditionError(f"m0={m0} does not match {n_tasks} exploration tasks")
    per_arm = np.bincount(arms, minlength=d)
    if arms.max() >= d or np.any(per_arm != m0):
        raise PreconditionError("each exploration task must pull every basis arm exactly once")
    gram = m0 * basis.T @ basis
    rhs = basis.T @ np.bincount(arms, weights=rewards, minlength=d)
    return PriorEstimate(theta=np.linalg.solve(gram, rhs))


def spanning_basis(arms: ArmSet) -> np.ndarray:
    """Indices of d arms spanning R^d, chosen by greedy residual pivoting."""
    if arms.is_basis:
        return np.arange(arms.count)
    X = arms.features.copy()
    d = X.shape[1]
    chosen = []
    for _ in range(d):
        norms = np.linalg.norm(X, axis=1)
        norms[chosen] = -1.0
        j = int(np.argmax(norms))
        if norms[j] < 1e-8:
            raise PreconditionError("arm features do not span R^d")
        chosen.append(j)
        q = X[j] / norms[j]
        X = X - np.outer(X @ q, q)
    return np.array(chosen)


# -- Bayesian meta-learner ------------------------------------------------------


def b_meta_srm(meta: GaussianMetaPriorSpec, Sigma0, sigma: float, policy: PolicyKind,
               tasks: Sequence[TaskInstance], n: int, rng: RngSource, arms: Optional[ArmSet] = None,
               ctx: Optional[RunContext] = None, trace: Optional[list] = None) -> RunContext:
    """B-metaSRM: prior for each task from the meta-posterior, which absorbs each finished task.

    ``trace`` (if given) receives one dict per task with the meta-posterior mean
    used for the task and, for BayesUCB, the confidence multiplier at round one.
    """
    ctx = RunContext() if ctx is None else ctx
    Sigma0 = np.asarray(Sigma0, dtype=float)
    state = MetaPosteriorState.from_meta_prior(meta)
    for s, task in enumerate(tasks):
        arms_s = ArmSet.finite(task.n_arms) if arms is None else arms
        prior = uncertainty_adjusted_prior(state, Sigma0)
        if trace is not None:
            info = {"task": ctx.first_task + s, "theta_hat": prior.mean.copy()}
            if policy.tag == "bayes-ucb":
                info["gamma"] = gamma_coefficient(prior, arms_s, sigma, policy.delta)
            trace.append(info)
        g = _task_rng(rng, s)
        traj = play(policy, prior, task, n, g, arms_s)
        ctx.record(s, task, traj, recommend_by_pull_frequency(traj, g))
        state = meta_posterior_update(state, TaskSummary.from_trajectory(traj, arms_s), Sigma0, sigma)
    if trace is not None:
        trace.append({"final_state": state})
    return ctx


# -- fixed-prior baselines ----------------------------------------------------------


def fixed_prior_ts(belief: PolicyState, tasks: Sequence[TaskInstance], n: int, rng: RngSource,
                   arms: Optional[ArmSet] = None, ctx: Optional[RunContext] = None,
                   policy: PolicyKind = PolicyKind()) -> RunContext:
    ctx = RunContext() if ctx is None else ctx
    for s, task in enumerate(tasks):
        g = _task_rng(rng, s)
        traj = play(policy, belief, task, n, g, arms)
        ctx.record(s, task, traj, recommend_by_pull_frequency(traj, g))
    return ctx


def oracle_prior(prior: GaussianPriorSpec) -> GaussianBelief:
    return GaussianBelief(prior.theta_star, prior.Sigma0)


def agnostic_prior(meta: GaussianMetaPriorSpec, Sigma0) -> GaussianBelief:
    """N(0, Sigma_q + Sigma0): the task marginal when the structure is ignored."""
    return GaussianBelief(np.zeros(meta.dim), meta.Sigma_q + np.asarray(Sigma0, dtype=float))


def misspecified_meta_prior(meta: GaussianMetaPriorSpec, rng: np.random.Generator, radius: float = 50.0,
                            per_coordinate: bool = False) -> GaussianMetaPriorSpec:
    """Meta-prior with its mean replaced by a uniform [-radius, radius] draw.

    By default one draw shifts every coordinate; ``per_coordinate`` draws each
    coordinate independently.
    """
    size = meta.dim if per_coordinate else 1
    shift = rng.uniform(-radius, radius, size=size) * np.ones(meta.dim)
    return GaussianMetaPriorSpec(shift, meta.Sigma_q)


def baseline_agents(kind: str, tasks: Sequence[TaskInstance], n: int, rng: RngSource, *,
                    prior: Optional[GaussianPriorSpec] = None,
                    meta: Optional[GaussianMetaPriorSpec] = None,
                    misspec_rng: Optional[np.random.Generator] = None, radius: float = 50.0,
                    per_coordinate: bool = False, ctx: Optional[RunContext] = None) -> RunContext:
    """Run ``oracle-ts``, ``agnostic-ts`` or ``mis-b-metasrm`` over the task sequence."""
    if prior is None:
        raise PreconditionError("baselines need the task prior (arms, Sigma0, sigma)")
    if kind == "oracle-ts":
        return fixed_prior_ts(oracle_prior(prior), tasks, n, rng, prior.arms, ctx)
    if meta is None:
        raise PreconditionError(f"{kind} needs a meta-prior")
    if kind == "agnostic-ts":
        return fixed_prior_ts(agnostic_prior(meta, prior.Sigma0), tasks, n, rng, prior.arms, ctx)
    if kind == "mis-b-metasrm":
        if misspec_rng is None:
            raise PreconditionError("mis-b-metasrm needs a random stream for the misspecified mean")
        wrong = misspecified_meta_prior(meta, misspec_rng, radius, per_coordinate)
        return b_meta_srm(wrong, prior.Sigma0, prior.sigma, PolicyKind.thompson(), tasks, n, rng,
                          prior.arms, ctx)
    raise PreconditionError(f"unknown baseline {kind!r}")


# -- frequentist meta-learner -------------------------------------------------------


def _bernoulli_batches(m0: int, k: int) -> int:
    """Tasks per arm; m0 is rounded up to a multiple of K."""
    return max(1, math.ceil(m0 / k))


def f_meta_srm(strategy: ExploreStrategy, mode: str, tasks: Sequence[TaskInstance], n: int,
               rng: RngSource, *, arms: Optional[ArmSet] = None, Sigma0=None,
               agnostic: Optional[PolicyState] = None, injected: Optional[PriorEstimate] = None,
               ctx: Optional[RunContext] = None, trace: Optional[list] = None) -> RunContext:
    """f-metaSRM with Thompson sampling as the base algorithm.

    ``commit``: the first m0 tasks spend exploration pulls and play ``agnostic``
    TS for the rest; afterwards the estimate is frozen and each task runs TS
    from the estimated prior. ``continual``: every task explores, re-estimates
    from all data so far and runs TS from the fresh estimate. ``injected``
    replaces the estimate when m0 = 0 in commit mode.
    """
    if mode not in ("commit", "continual"):
        raise PreconditionError(f"unknown mode {mode!r}")
    ctx = RunContext() if ctx is None else ctx
    bernoulli = strategy.tag == "bernoulli-batched"
    if strategy.tag == "none" and injected is None:
        raise PreconditionError("strategy 'none' needs an injected estimate")
    if not bernoulli and Sigma0 is None:
        raise PreconditionError("Gaussian f-metaSRM needs Sigma0")
    k = tasks[0].n_arms if len(tasks) else 0
    arms = ArmSet.finite(k) if arms is None and k else arms
    if agnostic is None:
        if not bernoulli and strategy.tag != "none":
            raise PreconditionError("Gaussian f-metaSRM needs the agnostic prior for exploration tasks")
        agnostic = BetaBelief.uniform(k) if bernoulli else None
    basis_idx = spanning_basis(arms) if strategy.tag == "linear-basis" else None
    if basis_idx is not None and n < basis_idx.size and (strategy.m0 > 0 or mode == "continual"):
        raise PreconditionError(f"horizon n={n} is shorter than the {basis_idx.size} basis pulls")
    if bernoulli:
        per_batch = _bernoulli_batches(strategy.m0, k)
        m0 = per_batch * k
        if mode == "commit" and per_batch < 2 and strategy.m0 > 0:
            raise PreconditionError(f"m0={strategy.m0} gives one exploration task per arm; "
                                    f"moment matching needs m0 >= {2 * k}")
        if strategy.t0 > n:
            raise PreconditionError("t0 exceeds the horizon")
    else:
        m0 = strategy.m0
    data = ExplorationDataset()
    estimate = injected if (mode == "commit" and m0 == 0) else None
    explored = 0
    policy = PolicyKind.thompson()

    for s, task in enumerate(tasks):
        g = _task_rng(rng, s)
        exploring = strategy.tag != "none" and (mode == "continual" or s < m0)
        if not exploring:
            if estimate is None:
                raise PreconditionError("no prior estimate available")
            traj = play(policy, estimate.belief(Sigma0), task, n, g, arms)
        else:
            if bernoulli:
                arm = (s % k) if mode == "continual" else min(s // per_batch, k - 1)
                forced = np.full(strategy.t0, arm)
                labels = np.full(strategy.t0, arm)
            else:
                forced = basis_idx
                labels = np.arange(basis_idx.size)
            head = play(policy, agnostic, task, forced.size, g, arms, forced)
            data.extend(np.full(forced.size, explored), labels, head.rewards)
            explored += 1
            if mode == "continual" or explored == m0:
                estimate = _estimate(strategy, data, k, arms, basis_idx, explored, mode)
            if mode == "continual":
                start = estimate.belief(Sigma0)
            else:
                start = agnostic
            traj = head
            rest = n - head.n
            if rest > 0:
                start = _condition(start, head, arms, task.sigma)
                traj = concat_trajectories(head, play(policy, start, task, rest, g, arms))
        if trace is not None:
            trace.append({"task": ctx.first_task + s, "estimate": estimate, "exploring": exploring})
        ctx.record(s, task, traj, recommend_by_pull_frequency(traj, g))
    return ctx


def _estimate(strategy, data, k, arms, basis_idx, explored, mode) -> PriorEstimate:
    if strategy.tag == "bernoulli-batched":
        return mom_estimate_beta(data, strategy.t0, k, allow_missing=(mode == "continual"))
    return ols_estimate_theta(data, arms.matrix()[basis_idx], explored)


def _condition(belief: PolicyState, head: Trajectory, arms: ArmSet, sigma: float) -> PolicyState:
    if isinstance(belief, BetaBelief):
        ones = np.bincount(head.arms, weights=head.rewards, minlength=belief.alpha.size)
        return BetaBelief(belief.alpha + ones, belief.beta + head.pull_counts - ones)
    return update_on_trajectory(belief, head, arms, sigma)

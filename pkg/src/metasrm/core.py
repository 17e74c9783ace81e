"""Arms, tasks, trajectories and regret accounting."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

NoiseKind = Literal["gaussian", "bernoulli"]


class PreconditionError(ValueError):
    """Raised when an operation is called on an input that violates its contract."""


@dataclass(frozen=True)
class ArmSet:
    """Either K indexed arms (standard basis) or K feature vectors in R^d."""

    kind: Literal["finite", "features"]
    count: int
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.count < 1:
            raise PreconditionError("arm set needs at least one arm")
        if self.kind == "features":
            feats = np.asarray(self.features, dtype=float)
            if feats.ndim != 2 or feats.shape[0] != self.count or feats.shape[1] < 1:
                raise PreconditionError(f"features must have shape ({self.count}, d), got {feats.shape}")
            if np.any(np.linalg.norm(feats, axis=1) > 1.0 + 1e-12):
                raise PreconditionError("feature vectors must have Euclidean norm <= 1")
            feats.setflags(write=False)
            object.__setattr__(self, "features", feats)
        elif self.kind == "finite":
            if self.features is not None:
                raise PreconditionError("finite arm sets carry no features")
        else:
            raise PreconditionError(f"unknown arm set kind {self.kind!r}")

    @classmethod
    def finite(cls, k: int) -> "ArmSet":
        return cls("finite", int(k))

    @classmethod
    def from_features(cls, features) -> "ArmSet":
        feats = np.atleast_2d(np.asarray(features, dtype=float))
        return cls("features", feats.shape[0], feats)

    @property
    def dim(self) -> int:
        return self.count if self.kind == "finite" else self.features.shape[1]

    @property
    def is_basis(self) -> bool:
        return self.kind == "finite"

    def matrix(self) -> np.ndarray:
        """K x d design matrix; the identity for indexed arms."""
        if self.kind == "finite":
            return np.eye(self.count)
        return self.features

    def feature(self, arm: int) -> np.ndarray:
        if self.kind == "finite":
            e = np.zeros(self.count)
            e[arm] = 1.0
            return e
        return self.features[arm]


@dataclass(frozen=True)
class TaskInstance:
    """One bandit problem.

    ``means`` always holds the K per-arm means. For feature arms ``param``
    holds the d-dimensional parameter that induced them.
    """

    means: np.ndarray
    noise: NoiseKind = "gaussian"
    sigma: float = 1.0
    param: Optional[np.ndarray] = None

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        if means.ndim != 1 or means.size < 1:
            raise PreconditionError("task means must be a non-empty vector")
        if self.noise == "gaussian":
            if not self.sigma > 0:
                raise PreconditionError("gaussian noise needs sigma > 0")
        elif self.noise == "bernoulli":
            if np.any(means < 0) or np.any(means > 1):
                raise PreconditionError("bernoulli means must lie in [0, 1]")
        else:
            raise PreconditionError(f"unknown noise model {self.noise!r}")
        means.setflags(write=False)
        object.__setattr__(self, "means", means)
        if self.param is not None:
            p = np.asarray(self.param, dtype=float)
            p.setflags(write=False)
            object.__setattr__(self, "param", p)

    @classmethod
    def linear(cls, arms: ArmSet, param, sigma: float = 1.0) -> "TaskInstance":
        param = np.asarray(param, dtype=float)
        return cls(arms.matrix() @ param, "gaussian", sigma, param)

    @property
    def n_arms(self) -> int:
        return self.means.size


@dataclass(frozen=True)
class Trajectory:
    """Pulled arms and observed rewards of one task, in round order."""

    arms: np.ndarray
    rewards: np.ndarray
    n_arms: int
    pull_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        arms = np.asarray(self.arms, dtype=np.int64).ravel()
        rewards = np.asarray(self.rewards, dtype=float).ravel()
        if arms.shape != rewards.shape:
            raise PreconditionError("arms and rewards differ in length")
        if arms.size and (arms.min() < 0 or arms.max() >= self.n_arms):
            raise PreconditionError("arm index out of range")
        counts = np.bincount(arms, minlength=self.n_arms)
        for a in (arms, rewards, counts):
            a.setflags(write=False)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "pull_counts", counts)

    @classmethod
    def from_steps(cls, steps: Sequence[tuple[int, float]], n_arms: int) -> "Trajectory":
        if len(steps) == 0:
            return cls(np.zeros(0, dtype=np.int64), np.zeros(0), n_arms)
        arms, rewards = zip(*steps)
        return cls(np.array(arms), np.array(rewards), n_arms)

    @classmethod
    def from_counts(cls, counts: Sequence[int], rewards=None) -> "Trajectory":
        """Trajectory pulling arm 0 counts[0] times, then arm 1, and so on."""
        counts = np.asarray(counts, dtype=np.int64)
        arms = np.repeat(np.arange(counts.size), counts)
        if rewards is None:
            rewards = np.zeros(arms.size)
        return cls(arms, rewards, counts.size)

    @property
    def n(self) -> int:
        return self.arms.size

    @property
    def steps(self) -> list[tuple[int, float]]:
        return list(zip(self.arms.tolist(), self.rewards.tolist()))


def concat_trajectories(first: Trajectory, second: Trajectory) -> Trajectory:
    if first.n_arms != second.n_arms:
        raise PreconditionError("trajectories over different arm sets")
    return Trajectory(np.concatenate([first.arms, second.arms]),
                      np.concatenate([first.rewards, second.rewards]), first.n_arms)


def task_fingerprint(task: TaskInstance) -> str:
    """Short stable hash of the task means; equal across agents facing the same task."""
    return f"{zlib.crc32(np.ascontiguousarray(task.means, dtype='<f8').tobytes()):08x}"


def _require_complete(trajectory: Trajectory) -> None:
    if trajectory.n < 1:
        raise PreconditionError("trajectory is empty")


def best_arm(task: TaskInstance) -> tuple[int, float]:
    """Lowest-index maximiser of the arm means and its mean."""
    a = int(np.argmax(task.means))
    return a, float(task.means[a])


def recommend_by_pull_frequency(trajectory: Trajectory, rng: np.random.Generator) -> int:
    """Draw an arm with probability N_a / n."""
    _require_complete(trajectory)
    # inverse-CDF on integer counts keeps the probabilities exact
    u = rng.integers(trajectory.n)
    return int(np.searchsorted(np.cumsum(trajectory.pull_counts), u, side="right"))


def cumulative_regret(task: TaskInstance, trajectory: Trajectory) -> float:
    _require_complete(trajectory)
    _, top = best_arm(task)
    counts = trajectory.pull_counts
    return float(max(trajectory.n * top - counts @ task.means, 0.0))


def expected_recommendation_regret(task: TaskInstance, trajectory: Trajectory) -> float:
    """Simple regret averaged over the pull-frequency recommendation."""
    _require_complete(trajectory)
    _, top = best_arm(task)
    rho = trajectory.pull_counts / trajectory.n
    return float(max(top - rho @ task.means, 0.0))


def realized_simple_regret(task: TaskInstance, arm: int) -> float:
    _, top = best_arm(task)
    return float(top - task.means[arm])


LEDGER_COLUMNS = ("replication", "task", "agent", "expected", "realized", "cumulative", "seed_fp")


@dataclass
class RegretLedger:
    """Append-only table of per-task regrets.

    Rows are ``(replication, task, agent, expected, realized, cumulative, seed_fp)``
    where ``expected`` is the simple regret averaged over the recommendation,
    ``realized`` the simple regret of the drawn recommendation and
    ``cumulative`` the in-task cumulative regret.
    """

    rows: list = field(default_factory=list)

    def append(self, replication: int, task: int, agent: str, expected: float,
               realized: float, cumulative: float, seed_fp: str = "") -> None:
        self.rows.append((int(replication), int(task), str(agent), float(expected),
                          float(realized), float(cumulative), str(seed_fp)))

    def record(self, replication: int, task_index: int, agent: str, task: TaskInstance,
               trajectory: Trajectory, recommended: int, seed_fp: str = "") -> None:
        self.append(replication, task_index, agent,
                    expected_recommendation_regret(task, trajectory),
                    realized_simple_regret(task, recommended),
                    cumulative_regret(task, trajectory), seed_fp)

    def extend(self, other: "RegretLedger") -> None:
        self.rows.extend(other.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def agents(self) -> list[str]:
        return sorted({r[2] for r in self.rows})

    def select(self, agent: str) -> "RegretLedger":
        return RegretLedger([r for r in self.rows if r[2] == agent])

    def matrix(self, agent: Optional[str] = None, column: str = "expected") -> tuple[np.ndarray, np.ndarray]:
        """(task indices, R x m array of ``column``) for one agent.

        Raises PreconditionError if replications cover different task ranges.
        """
        rows = self.rows if agent is None else [r for r in self.rows if r[2] == agent]
        if not rows:
            raise PreconditionError("ledger is empty")
        if agent is None and len({r[2] for r in rows}) > 1:
            raise PreconditionError("ledger holds several agents; pass one")
        col = LEDGER_COLUMNS.index(column)
        by_rep: dict[int, dict[int, float]] = {}
        for r in rows:
            by_rep.setdefault(r[0], {})[r[1]] = r[col]
        reps = sorted(by_rep)
        tasks = sorted(by_rep[reps[0]])
        for rep in reps[1:]:
            if sorted(by_rep[rep]) != tasks:
                raise PreconditionError(f"replication {rep} covers a different task range")
        values = np.array([[by_rep[rep][s] for s in tasks] for rep in reps], dtype=float)
        return np.array(tasks), values


@dataclass(frozen=True)
class RegretCurve:
    tasks: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    cumulative_mean: np.ndarray
    replications: int
    mode: str


def aggregate_regret(ledger: RegretLedger, mode: str = "bayes-monte-carlo",
                     agent: Optional[str] = None, column: str = "expected") -> RegretCurve:
    """Per-task mean regret across replications with standard errors.

    ``mode`` labels what the average estimates: the frequentist meta simple
    regret (fixed prior) or a Monte-Carlo estimate of the Bayesian one (prior
    redrawn per replication). The arithmetic is the same.
    """
    if mode not in ("frequentist", "bayes-monte-carlo"):
        raise PreconditionError(f"unknown aggregation mode {mode!r}")
    tasks, values = ledger.matrix(agent, column)
    r = values.shape[0]
    mean = values.mean(axis=0)
    stderr = values.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.zeros_like(mean)
    cum_mean = np.cumsum(mean) / np.arange(1, mean.size + 1)
    return RegretCurve(tasks, mean, stderr, cum_mean, r, mode)

import math

import numpy as np
import pytest
from scipy import optimize, stats

from metasrm.core import (ArmSet, PreconditionError, RegretLedger, TaskInstance, concat_trajectories,
                          recommend_by_pull_frequency, task_fingerprint)
from metasrm.diagnostics import beta_binomial_moment_oracle, pinsker_prior_error
from metasrm.environments import (BetaPriorSpec, GaussianMetaPriorSpec, GaussianPriorSpec,
                                  sample_prior_from_meta, sample_task, sphere_arms)
from metasrm.meta import (ExplorationDataset, ExploreStrategy, PriorEstimate, agnostic_prior,
                          b_meta_srm, baseline_agents, beta_from_moments, f_meta_srm, fixed_prior_ts,
                          misspecified_meta_prior, mom_estimate_beta, ols_estimate_theta, oracle_prior,
                          spanning_basis)
from metasrm.policies import PolicyKind, play
from metasrm.posteriors import BetaBelief, GaussianBelief, update_on_trajectory


def _per_task(seed):
    return lambda s: np.random.default_rng([seed, s])


def _bernoulli_data(alpha, beta, t0, tasks, rng):
    p = rng.beta(alpha, beta, tasks)
    x = rng.binomial(1, np.repeat(p, t0))
    data = ExplorationDataset()
    data.extend(np.repeat(np.arange(tasks), t0), np.zeros(tasks * t0), x)
    return data


# -- method of moments ----------------------------------------------------------


def test_mom_uniform_two_pulls():
    m1, m2 = beta_binomial_moment_oracle(1, 1, 2)
    assert (m1, m2) == pytest.approx((1.0, 5 / 3), abs=1e-12)
    assert beta_from_moments(m1, m2, 2) == pytest.approx((1.0, 1.0), abs=1e-9)


def _moment_matching_oracle(m1, m2, t0):
    """Numeric search over (log alpha, log beta) minimising the moment mismatch."""
    def resid(z):
        a, b = np.exp(z)
        e1, e2 = beta_binomial_moment_oracle(a, b, t0)
        return [e1 - m1, e2 - m2]
    sol = optimize.least_squares(resid, [0.0, 0.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return tuple(np.exp(sol.x))


@pytest.mark.parametrize("alpha,beta,t0", [(2, 5, 5), (0.5, 2, 10), (5, 1, 2)])
def test_closed_form_inverse_matches_numeric_oracle(alpha, beta, t0):
    m1, m2 = beta_binomial_moment_oracle(alpha, beta, t0)
    closed = beta_from_moments(m1, m2, t0)
    assert closed == pytest.approx((alpha, beta), rel=1e-6)
    assert closed == pytest.approx(_moment_matching_oracle(m1, m2, t0), rel=1e-5)


def test_infeasible_moments_fall_back():
    # binomial dispersion (no Beta mixing) leaves no solution
    t0, p = 5, 0.3
    m1, m2 = t0 * p, t0 * p * (1 - p) + (t0 * p) ** 2
    assert beta_from_moments(m1, m2, t0) is None
    data = ExplorationDataset()
    data.extend([0, 0, 1, 1], [0, 0, 0, 0], [1, 1, 1, 1])
    est = mom_estimate_beta(data, 2, 1)
    assert est.fallback_arms == (0,)
    assert (est.alpha[0], est.beta[0]) == (1.0, 1.0)


def test_mom_statistical_consistency():
    est = mom_estimate_beta(_bernoulli_data(2, 5, 5, 100_000, np.random.default_rng(0)), 5, 1)
    assert est.alpha[0] == pytest.approx(2, rel=0.1)
    assert est.beta[0] == pytest.approx(5, rel=0.1)


def test_mom_preconditions():
    data = ExplorationDataset()
    data.extend([0, 0, 0], [0, 0, 0], [1, 0, 1])
    with pytest.raises(PreconditionError):
        mom_estimate_beta(data, 2, 1)
    with pytest.raises(PreconditionError):
        mom_estimate_beta(ExplorationDataset(), 1, 1)
    with pytest.raises(PreconditionError):
        mom_estimate_beta(ExplorationDataset(), 2, 2)
    assert mom_estimate_beta(ExplorationDataset(), 2, 2, allow_missing=True).fallback_arms == (0, 1)


# -- least squares --------------------------------------------------------------


def test_ols_hand_solved():
    data = ExplorationDataset()
    data.extend([0, 0, 1, 1], [0, 1, 0, 1], [1.0, 2.0, 3.0, 4.0])
    assert ols_estimate_theta(data, np.eye(2), 2).theta == pytest.approx([2.0, 3.0])


def test_ols_noiseless_is_exact():
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    theta = np.array([0.5, -1.0, 2.0])
    data = ExplorationDataset()
    for s in range(4):
        data.extend(np.full(3, s), np.arange(3), basis @ theta)
    assert ols_estimate_theta(data, basis).theta == pytest.approx(theta, abs=1e-12)


def test_ols_preconditions():
    data = ExplorationDataset()
    data.extend([0, 0], [0, 1], [1.0, 2.0])
    with pytest.raises(PreconditionError):
        ols_estimate_theta(data, np.eye(2), 3)
    with pytest.raises(PreconditionError):
        ols_estimate_theta(data, [[1, 0], [1, 0]])
    partial = ExplorationDataset()
    partial.extend([0], [0], [1.0])
    with pytest.raises(PreconditionError):
        ols_estimate_theta(partial, np.eye(2))


def test_spanning_basis():
    arms = sphere_arms(12, 4, np.random.default_rng(2))
    idx = spanning_basis(arms)
    assert idx.size == 4 and np.linalg.matrix_rank(arms.features[idx]) == 4
    assert spanning_basis(ArmSet.finite(3)).tolist() == [0, 1, 2]
    with pytest.raises(PreconditionError):
        spanning_basis(ArmSet.from_features([[1, 0], [0.5, 0]]))


def test_pinsker_proxy_shrinks_with_m0():
    rng = np.random.default_rng(3)
    theta = np.array([0.3, -0.4])
    err = {}
    for m0 in (10, 100, 1000):
        vals = []
        for _ in range(100):
            mu = theta + 0.1 * rng.standard_normal((m0, 2))
            y = mu + rng.standard_normal((m0, 2))
            data = ExplorationDataset()
            data.extend(np.repeat(np.arange(m0), 2), np.tile([0, 1], m0), y.ravel())
            vals.append(pinsker_prior_error(ols_estimate_theta(data, np.eye(2)).theta, theta, 0.1))
        err[m0] = np.mean(vals)
    assert err[10] > err[100] > err[1000]


# -- f-metaSRM ------------------------------------------------------------------


def _gaussian_setup(K=5, m=30, seed=0):
    rng = np.random.default_rng(seed)
    meta = GaussianMetaPriorSpec(np.zeros(K), np.eye(K))
    Sigma0 = 0.01 * np.eye(K)
    prior = sample_prior_from_meta(meta, Sigma0, ArmSet.finite(K), 1.0, rng)
    tasks = [sample_task(prior, rng) for _ in range(m)]
    return meta, Sigma0, prior, tasks


def test_injected_true_prior_equals_oracle_ts():
    meta, Sigma0, prior, tasks = _gaussian_setup()
    f = f_meta_srm(ExploreStrategy("none"), "commit", tasks, 20, _per_task(4), Sigma0=Sigma0,
                   injected=PriorEstimate(theta=prior.theta_star))
    o = fixed_prior_ts(oracle_prior(prior), tasks, 20, _per_task(4))
    assert f.ledger.rows == o.ledger.rows


def test_all_exploration_tasks_when_m_below_m0():
    meta, Sigma0, prior, tasks = _gaussian_setup(m=4)
    trace = []
    ctx = f_meta_srm(ExploreStrategy("linear-basis", 10), "commit", tasks, 20, _per_task(0),
                     Sigma0=Sigma0, agnostic=agnostic_prior(meta, Sigma0), trace=trace)
    assert len(ctx.ledger) == 4
    assert all(t["exploring"] for t in trace)
    assert all(t["estimate"] is None for t in trace)


def test_commit_freezes_estimate_after_m0():
    meta, Sigma0, prior, tasks = _gaussian_setup(m=12)
    trace = []
    f_meta_srm(ExploreStrategy("linear-basis", 5), "commit", tasks, 20, _per_task(1),
               Sigma0=Sigma0, agnostic=agnostic_prior(meta, Sigma0), trace=trace)
    assert [t["exploring"] for t in trace] == [True] * 5 + [False] * 7
    frozen = trace[4]["estimate"]
    assert frozen is not None and all(t["estimate"] is frozen for t in trace[5:])


def test_exploration_task_reconstructed_by_hand():
    meta, Sigma0, prior, tasks = _gaussian_setup(K=4, m=1)
    arms = ArmSet.finite(4)
    agn = agnostic_prior(meta, Sigma0)
    ctx = f_meta_srm(ExploreStrategy("linear-basis", 1), "commit", tasks, 8, _per_task(2), Sigma0=Sigma0,
                     agnostic=agn)
    g = _per_task(2)(0)
    head = play(PolicyKind.thompson(), agn, tasks[0], 4, g, arms, [0, 1, 2, 3])
    assert head.arms.tolist() == [0, 1, 2, 3]
    post = update_on_trajectory(agn, head, arms, 1.0)
    tail = play(PolicyKind.thompson(), post, tasks[0], 4, g, arms)
    full = concat_trajectories(head, tail)
    rec = recommend_by_pull_frequency(full, g)
    expected = RegretLedger()
    expected.record(0, 1, "agent", tasks[0], full, rec, task_fingerprint(tasks[0]))
    assert ctx.ledger.rows == expected.rows


def test_continual_reestimates_every_task():
    meta, Sigma0, prior, tasks = _gaussian_setup(m=6)
    trace = []
    f_meta_srm(ExploreStrategy("linear-basis", 0), "continual", tasks, 20, _per_task(3),
               Sigma0=Sigma0, agnostic=agnostic_prior(meta, Sigma0), trace=trace)
    ests = [t["estimate"].theta for t in trace]
    assert all(t["exploring"] for t in trace)
    assert all(not np.array_equal(a, b) for a, b in zip(ests, ests[1:]))


def test_bernoulli_commit_batches():
    rng = np.random.default_rng(5)
    prior = BetaPriorSpec([2.0, 5.0, 1.0], [5.0, 2.0, 1.0])
    tasks = [sample_task(prior, rng) for _ in range(40)]
    trace = []
    ctx = f_meta_srm(ExploreStrategy("bernoulli-batched", 8, 4), "commit", tasks, 10, _per_task(6), trace=trace)
    # m0 = 8 rounds up to 9 = 3 batches of 3 tasks
    assert sum(t["exploring"] for t in trace) == 9
    est = trace[8]["estimate"]
    assert est.alpha.shape == (3,)
    assert len(ctx.ledger) == 40


def test_f_meta_preconditions():
    meta, Sigma0, prior, tasks = _gaussian_setup(m=2)
    with pytest.raises(PreconditionError):
        f_meta_srm(ExploreStrategy("linear-basis", 1), "commit", tasks, 20, _per_task(0), Sigma0=Sigma0)
    with pytest.raises(PreconditionError):
        f_meta_srm(ExploreStrategy("linear-basis", 1), "sometimes", tasks, 20, _per_task(0), Sigma0=Sigma0)
    with pytest.raises(PreconditionError):
        f_meta_srm(ExploreStrategy("linear-basis", 1), "commit", tasks, 3, _per_task(0), Sigma0=Sigma0,
                   agnostic=agnostic_prior(meta, Sigma0))
    with pytest.raises(PreconditionError):
        ExploreStrategy("bernoulli-batched", 5, 1)


# -- B-metaSRM and baselines ----------------------------------------------------------


def test_b_meta_with_no_tasks():
    meta = GaussianMetaPriorSpec([0.1, 0.2], np.eye(2))
    trace = []
    ctx = b_meta_srm(meta, 0.01 * np.eye(2), 1.0, PolicyKind.thompson(), [], 20, _per_task(0), trace=trace)
    assert len(ctx.ledger) == 0
    state = trace[-1]["final_state"]
    assert state.theta_hat == pytest.approx([0.1, 0.2]) and state.covariance == pytest.approx(np.eye(2))


def test_b_meta_with_collapsed_meta_prior_matches_oracle():
    K, reps = 5, 1000
    diffs = []
    for r in range(reps):
        rng = np.random.default_rng([7, r])
        theta = rng.standard_normal(K)
        prior = GaussianPriorSpec(theta, 0.01 * np.eye(K), 1.0, ArmSet.finite(K))
        tasks = [sample_task(prior, rng) for _ in range(3)]
        meta = GaussianMetaPriorSpec(theta, 1e-12 * np.eye(K))
        b = b_meta_srm(meta, prior.Sigma0, 1.0, PolicyKind.thompson(), tasks, 20, _per_task(r))
        o = fixed_prior_ts(oracle_prior(prior), tasks, 20, _per_task(10_000 + r))
        diffs.append(sum(x[3] for x in b.ledger.rows) - sum(x[3] for x in o.ledger.rows))
    diffs = np.array(diffs)
    assert abs(diffs.mean()) < 3 * diffs.std(ddof=1) / math.sqrt(reps)


def test_first_task_matches_agnostic_ts_in_law():
    K, runs = 5, 10_000
    meta = GaussianMetaPriorSpec(np.zeros(K), np.eye(K))
    Sigma0 = 0.01 * np.eye(K)
    task = TaskInstance(np.linspace(-0.5, 0.5, K))
    b_arms, a_arms = [], []
    for i in range(runs):
        b = b_meta_srm(meta, Sigma0, 1.0, PolicyKind.thompson(), [task], 1, np.random.default_rng([1, i]))
        a = fixed_prior_ts(agnostic_prior(meta, Sigma0), [task], 1, np.random.default_rng([2, i]))
        b_arms.append(b.ledger.rows[0][3])
        a_arms.append(a.ledger.rows[0][3])
    # one pull per task: the regret identifies the selected arm
    assert stats.ks_2samp(b_arms, a_arms).pvalue > 1e-3


def _concentration_errors(reps=100):
    """l2 error of the meta-posterior mean after 10 and after 200 tasks."""
    errs = []
    for r in range(reps):
        meta, Sigma0, prior, tasks = _gaussian_setup(K=10, m=200, seed=100 + r)
        trace = []
        b_meta_srm(meta, Sigma0, 1.0, PolicyKind.thompson(), tasks, 20, _per_task(r), trace=trace)
        # trace[s] carries the estimate used for task s + 1, i.e. after s tasks
        errs.append((np.linalg.norm(trace[10]["theta_hat"] - prior.theta_star),
                     np.linalg.norm(trace[-1]["final_state"].theta_hat - prior.theta_star)))
    return np.array(errs)


@pytest.fixture(scope="module")
def concentration_errors():
    return _concentration_errors()


def test_meta_posterior_concentrates_on_average(concentration_errors):
    gain = concentration_errors[:, 0] - concentration_errors[:, 1]
    assert gain.mean() > 3 * gain.std(ddof=1) / math.sqrt(gain.size)


@pytest.mark.xfail(strict=True, reason="arms TS stops pulling keep prior-level error; about 85% of "
                                       "replications shrink, not 95%")
def test_meta_posterior_concentrates_in_most_replications(concentration_errors):
    shrank = concentration_errors[:, 1] < concentration_errors[:, 0]
    assert shrank.mean() >= 0.95


def test_misspecified_meta_prior():
    meta = GaussianMetaPriorSpec(np.zeros(4), np.eye(4))
    shifts = np.array([misspecified_meta_prior(meta, np.random.default_rng(i)).psi_q for i in range(500)])
    assert np.all(np.abs(shifts) <= 50)
    assert np.all(shifts == shifts[:, :1])
    assert stats.kstest(shifts[:, 0], "uniform", args=(-50, 100)).pvalue > 1e-3
    per = misspecified_meta_prior(meta, np.random.default_rng(0), per_coordinate=True).psi_q
    assert np.unique(per).size == 4


def test_baseline_agents():
    meta, Sigma0, prior, tasks = _gaussian_setup(m=3)
    for kind in ("oracle-ts", "agnostic-ts"):
        assert len(baseline_agents(kind, tasks, 20, _per_task(0), prior=prior, meta=meta).ledger) == 3
    mis = baseline_agents("mis-b-metasrm", tasks, 20, _per_task(0), prior=prior, meta=meta,
                          misspec_rng=np.random.default_rng(0))
    assert len(mis.ledger) == 3
    with pytest.raises(PreconditionError):
        baseline_agents("mis-b-metasrm", tasks, 20, _per_task(0), prior=prior, meta=meta)
    with pytest.raises(PreconditionError):
        baseline_agents("metats", tasks, 20, _per_task(0), prior=prior, meta=meta)


def test_agnostic_prior_shape():
    meta = GaussianMetaPriorSpec(np.ones(3), 2 * np.eye(3))
    p = agnostic_prior(meta, 0.01 * np.eye(3))
    assert np.array_equal(p.mean, np.zeros(3))
    assert p.covariance == pytest.approx(2.01 * np.eye(3))


def test_prior_estimate_validation():
    with pytest.raises(PreconditionError):
        PriorEstimate()
    with pytest.raises(PreconditionError):
        PriorEstimate(alpha=np.array([0.0]), beta=np.array([1.0]))
    assert isinstance(PriorEstimate(alpha=np.ones(2), beta=np.ones(2)).belief(), BetaBelief)
    assert isinstance(PriorEstimate(theta=np.zeros(2)).belief(np.eye(2)), GaussianBelief)

"""Replication runner, result CSV and summaries."""
from __future__ import annotations

import csv
import io
import re
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .core import ArmSet, RegretLedger, aggregate_regret
from .environments import (BetaPriorSpec, GaussianMetaPriorSpec, GaussianPriorSpec,
                           sample_prior_from_meta, sample_task, sphere_arms)
from .meta import (ExploreStrategy, RunContext, agnostic_prior, b_meta_srm, baseline_agents,
                   f_meta_srm, fixed_prior_ts)
from .posteriors import BetaBelief, GaussianBelief
from .policies import PolicyKind

RESULT_HEADER = ("replication", "task", "agent", "expected_simple_regret",
                 "realized_simple_regret", "cumulative_regret", "seed_fp")
SUMMARY_HEADER = ("task", "agent", "mean", "stderr", "cum_mean")

# stream-key namespaces
_ENV, _AGENT, _MISSPEC = 0, 1, 2
_ENV_PRIOR, _ENV_ARMS, _ENV_TASK = 0, 1, 2


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-keyed generator: the same key always yields the same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def agent_key(tag: str) -> int:
    return zlib.crc32(tag.encode())


def _arms(cfg: ExperimentConfig, rep: int) -> ArmSet:
    if cfg.family != "linear-gaussian":
        return ArmSet.finite(cfg.K)
    if cfg.arms is not None:
        return ArmSet.from_features(cfg.arms)
    return sphere_arms(cfg.K, cfg.d, stream(cfg.seed, rep if cfg.resample_arms else 0, _ENV, _ENV_ARMS))


def environment(cfg: ExperimentConfig, rep: int):
    """(prior, meta-prior, tasks) for one replication; identical for every agent."""
    if cfg.family == "bernoulli":
        prior = BetaPriorSpec(cfg.alpha_star, cfg.beta_star)
        meta = None
    else:
        arms = _arms(cfg, rep)
        meta = GaussianMetaPriorSpec(cfg.psi_q, cfg.Sigma_q)
        if cfg.setting == "bayesian":
            prior = sample_prior_from_meta(meta, cfg.Sigma0, arms, cfg.sigma,
                                           stream(cfg.seed, rep, _ENV, _ENV_PRIOR))
        else:
            prior = GaussianPriorSpec(cfg.theta_star, cfg.Sigma0, cfg.sigma, arms)
    tasks = [sample_task(prior, stream(cfg.seed, rep, _ENV, _ENV_TASK, s)) for s in range(cfg.m)]
    return prior, meta, tasks


def misspec_stream(cfg: ExperimentConfig, rep: int) -> np.random.Generator:
    """Stream that draws the misspecified meta-prior mean of ``misb-metasrm``."""
    return stream(cfg.seed, rep, _MISSPEC, agent_key("misb-metasrm"))


def run_agent(cfg: ExperimentConfig, tag: str, rep: int, prior, meta, tasks,
              ctx: Optional[RunContext] = None, trace: Optional[list] = None) -> RunContext:
    key = agent_key(tag)
    ctx = RunContext(RegretLedger(), rep, tag) if ctx is None else ctx

    def rng(s: int) -> np.random.Generator:
        return stream(cfg.seed, rep, _AGENT, key, s)

    n = cfg.n
    if cfg.family == "bernoulli":
        if tag == "oracle-ts":
            return fixed_prior_ts(BetaBelief(prior.alpha, prior.beta), tasks, n, rng, ctx=ctx)
        if tag == "agnostic-ts":
            return fixed_prior_ts(BetaBelief.uniform(cfg.K), tasks, n, rng, ctx=ctx)
        if tag == "f-metasrm-continual":
            strat = ExploreStrategy("bernoulli-batched", 0, cfg.t0)
            return f_meta_srm(strat, "continual", tasks, n, rng, ctx=ctx, trace=trace)
        m0 = _m0(tag)
        return f_meta_srm(ExploreStrategy("bernoulli-batched", m0, cfg.t0), "commit", tasks, n, rng,
                          ctx=ctx, trace=trace)

    arms = prior.arms
    if tag in ("oracle-ts", "agnostic-ts"):
        return baseline_agents(tag, tasks, n, rng, prior=prior, meta=meta, ctx=ctx)
    if tag == "misb-metasrm":
        return baseline_agents("mis-b-metasrm", tasks, n, rng, prior=prior, meta=meta,
                               misspec_rng=misspec_stream(cfg, rep),
                               radius=cfg.misspec_radius, per_coordinate=cfg.misspec == "per-arm", ctx=ctx)
    if tag in ("b-metasrm", "b-metasrm-ucb"):
        policy = (PolicyKind.bayes_ucb(cfg.delta, cfg.ucb_sampled_mean) if tag.endswith("ucb")
                  else PolicyKind.thompson())
        return b_meta_srm(meta, cfg.Sigma0, cfg.sigma, policy, tasks, n, rng, arms, ctx, trace)
    agnostic = agnostic_prior(meta, cfg.Sigma0)
    if tag == "f-metasrm-continual":
        return f_meta_srm(ExploreStrategy("linear-basis", 0), "continual", tasks, n, rng, arms=arms,
                          Sigma0=cfg.Sigma0, agnostic=agnostic, ctx=ctx, trace=trace)
    return f_meta_srm(ExploreStrategy("linear-basis", _m0(tag)), "commit", tasks, n, rng, arms=arms,
                      Sigma0=cfg.Sigma0, agnostic=agnostic, ctx=ctx, trace=trace)


def _m0(tag: str) -> int:
    match = re.fullmatch(r"f-metasrm\[m0=(\d+)\]", tag)
    if not match:
        raise ValueError(f"unknown agent tag {tag!r}")
    return int(match.group(1))


def run_replication(cfg: ExperimentConfig, rep: int) -> list[tuple]:
    prior, meta, tasks = environment(cfg, rep)
    ledger = RegretLedger()
    for tag in cfg.agent_tags():
        run_agent(cfg, tag, rep, prior, meta, tasks, RunContext(ledger, rep, tag))
    return ledger.rows


def _replication_job(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def run_ledger(cfg: ExperimentConfig, workers: Optional[int] = None) -> RegretLedger:
    """All replications, rows in (replication, task, agent) order regardless of workers."""
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, r) for r in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_replication_job, jobs))
    else:
        chunks = [_replication_job(j) for j in jobs]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return RegretLedger(rows)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def ledger_to_csv(ledger: RegretLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for rep, task, agent, exp, real, cum, fp in ledger.rows:
        w.writerow((rep, task, agent, _fmt(exp), _fmt(real), _fmt(cum), fp))
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, output=None, workers: Optional[int] = None) -> Path:
    output = output or cfg.output
    if output is None:
        raise ValueError("no output path given")
    text = ledger_to_csv(run_ledger(cfg, workers))
    path = Path(output)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


class MalformedResult(ValueError):
    pass


def read_results(path) -> RegretLedger:
    ledger = RegretLedger()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_HEADER:
            raise MalformedResult(f"{path}:1: expected header {','.join(RESULT_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(RESULT_HEADER):
                raise MalformedResult(f"{path}:{lineno}: expected {len(RESULT_HEADER)} fields, got {len(row)}")
            try:
                rep, task = int(row[0]), int(row[1])
                vals = [float(x) for x in row[3:6]]
            except ValueError:
                raise MalformedResult(f"{path}:{lineno}: non-numeric field") from None
            if not all(np.isfinite(vals)) or not row[2]:
                raise MalformedResult(f"{path}:{lineno}: non-finite value or empty agent")
            ledger.append(rep, task, row[2], *vals, row[6])
    return ledger


def _family(tag: str) -> Optional[str]:
    match = re.fullmatch(r"(.+)\[m0=\d+\]", tag)
    return match.group(1) if match else None


def summarize_ledger(ledger: RegretLedger, pointwise_best: bool = True, mode: str = "bayes-monte-carlo",
                     column: str = "expected") -> list[tuple]:
    """Rows ``(task, agent, mean, stderr, cum_mean)``.

    With ``pointwise_best`` every family of m0-swept agents (``name[m0=..]``)
    also gets a ``name[best]`` curve: per task, the member with the lowest mean.
    """
    out = []
    curves = {}
    for agent in ledger.agents():
        curves[agent] = aggregate_regret(ledger, mode, agent=agent, column=column)
    if pointwise_best:
        families: dict[str, list[str]] = {}
        for agent in curves:
            fam = _family(agent)
            if fam is not None:
                families.setdefault(fam, []).append(agent)
        for fam, members in families.items():
            means = np.vstack([curves[a].mean for a in members])
            ses = np.vstack([curves[a].stderr for a in members])
            pick = np.argmin(means, axis=0)
            cols = np.arange(means.shape[1])
            mean = means[pick, cols]
            tasks = curves[members[0]].tasks
            curves[f"{fam}[best]"] = type(curves[members[0]])(
                tasks, mean, ses[pick, cols], np.cumsum(mean) / np.arange(1, mean.size + 1),
                curves[members[0]].replications, mode)
    for agent in sorted(curves):
        c = curves[agent]
        for i, s in enumerate(c.tasks):
            out.append((int(s), agent, float(c.mean[i]), float(c.stderr[i]), float(c.cumulative_mean[i])))
    out.sort(key=lambda r: (r[0], r[1]))
    return out


def summarize(result_path, output=None, pointwise_best: bool = True, mode: str = "bayes-monte-carlo") -> str:
    rows = summarize_ledger(read_results(result_path), pointwise_best, mode)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for task, agent, mean, se, cum in rows:
        w.writerow((task, agent, _fmt(mean), _fmt(se), _fmt(cum)))
    text = buf.getvalue()
    if output is not None:
        Path(output).write_text(text)
    return text

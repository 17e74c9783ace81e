"""Experiment configuration: flat ``key = value`` files and their validation.

Format: one key per line, ``#`` starts a comment, vectors are comma-separated,
matrices are semicolon-separated rows of comma-separated numbers. Unknown keys
are rejected. See ``KEYS`` for the schema.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .environments import block_covariance, psd_factor
from .core import PreconditionError


class ConfigError(ValueError):
    pass


FAMILIES = ("gaussian-mab", "linear-gaussian", "bernoulli")
AGENTS = ("oracle-ts", "agnostic-ts", "b-metasrm", "b-metasrm-ucb", "misb-metasrm",
          "f-metasrm", "f-metasrm-continual")

# key -> description
KEYS = {
    "family": "gaussian-mab | linear-gaussian | bernoulli",
    "setting": "bayesian (theta_star drawn from the meta-prior per replication) | frequentist (fixed theta_star)",
    "K": "number of arms",
    "d": "feature dimension (linear-gaussian only)",
    "m": "number of tasks",
    "n": "rounds per task",
    "replications": "number of independent runs R",
    "seed": "base seed",
    "sigma": "reward noise standard deviation",
    "psi_q": "meta-prior mean (vector; default zeros)",
    "sigma_q": "meta-prior scale, Sigma_q = sigma_q^2 I (default 1)",
    "Sigma_q": "full meta-prior covariance (matrix; overrides sigma_q)",
    "sigma0": "task prior scale, Sigma0 = sigma0^2 I (default 0.1)",
    "Sigma0": "full task prior covariance (matrix) or 'block'",
    "Sigma0_scale": "multiplier applied to Sigma0 (default 1)",
    "block_var": "per-arm variance of the 'block' Sigma0 (default 0.05)",
    "block_corr": "within-block correlation of the 'block' Sigma0 (default 0.95)",
    "block_size": "block size of the 'block' Sigma0 (default 3)",
    "theta_star": "fixed prior mean (frequentist setting; scalar broadcasts)",
    "alpha_star": "Beta prior alpha per arm (bernoulli)",
    "beta_star": "Beta prior beta per arm (bernoulli)",
    "arms": "fixed arm features (matrix, linear-gaussian); default unit-sphere draws",
    "resample_arms": "redraw sphere arms every replication (true/false, default true)",
    "agents": "comma list of " + ", ".join(AGENTS),
    "m0_grid": "comma list of m0 values for f-metasrm, or 'geometric' (1, 2, 5, 10, 20, ... <= m)",
    "t0": "exploration pulls per task for Bernoulli f-metasrm (default 2)",
    "delta": "BayesUCB confidence parameter (default 0.1)",
    "ucb_sampled_mean": "BayesUCB uses a posterior draw instead of the mean (default false)",
    "misspec": "misb-metasrm mean shift: 'shift' (one uniform draw for all coordinates) or 'per-arm'",
    "misspec_radius": "radius of the uniform misspecified meta-prior mean (default 50)",
    "workers": "parallel replications (default $METASRM_WORKERS or 1)",
    "output": "CSV path for run results",
}


def geometric_grid(m: int) -> list[int]:
    out, base = [], 1
    while base <= m:
        for step in (1, 2, 5):
            if step * base <= m:
                out.append(step * base)
        base *= 10
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def read_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(), str(path))


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (p.strip() for p in item.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = value
    return out


def _vector(raw: str, key: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in raw.split(",") if x.strip()], dtype=float)
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from None


def _matrix(raw: str, key: str) -> np.ndarray:
    rows = [_vector(r, key) for r in raw.split(";") if r.strip()]
    if not rows or len({r.size for r in rows}) != 1:
        raise ConfigError(f"{key}: rows must have equal length")
    return np.vstack(rows)


def _int(raw: str, key: str, minimum: int = 1) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
    return value


def _float(raw: str, key: str, positive: bool = False) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if positive and not value > 0:
        raise ConfigError(f"{key}: must be positive")
    return value


def _bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


@dataclass
class ExperimentConfig:
    family: str
    K: int
    d: int
    m: int
    n: int
    replications: int
    seed: int
    setting: str
    sigma: float
    psi_q: np.ndarray
    Sigma_q: np.ndarray
    Sigma0: np.ndarray
    agents: list
    m0_grid: list
    t0: int = 2
    delta: float = 0.1
    ucb_sampled_mean: bool = False
    theta_star: Optional[np.ndarray] = None
    alpha_star: Optional[np.ndarray] = None
    beta_star: Optional[np.ndarray] = None
    arms: Optional[np.ndarray] = None
    resample_arms: bool = True
    misspec: str = "shift"
    misspec_radius: float = 50.0
    workers: int = 1
    output: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.d if self.family == "linear-gaussian" else self.K

    def agent_tags(self) -> list[str]:
        tags = []
        for a in self.agents:
            if a == "f-metasrm":
                tags.extend(f"f-metasrm[m0={m0}]" for m0 in self.m0_grid)
            else:
                tags.append(a)
        return tags


def build_config(values: dict[str, str]) -> ExperimentConfig:
    """Validate raw key/value strings into an :class:`ExperimentConfig`."""
    v = dict(values)
    family = v.get("family", "gaussian-mab")
    if family not in FAMILIES:
        raise ConfigError(f"family: expected one of {FAMILIES}, got {family!r}")
    setting = v.get("setting", "bayesian" if family != "bernoulli" else "frequentist")
    if setting not in ("bayesian", "frequentist"):
        raise ConfigError(f"setting: expected bayesian or frequentist, got {setting!r}")
    if family == "bernoulli" and setting != "frequentist":
        raise ConfigError("setting: bernoulli runs support only the frequentist setting")

    K = _int(v.get("K", "10"), "K")
    d = _int(v.get("d", str(K) if family != "linear-gaussian" else "2"), "d")
    if family != "linear-gaussian":
        d = K
    m = _int(v.get("m", "200"), "m")
    n = _int(v.get("n", "20"), "n")
    reps = _int(v.get("replications", "100"), "replications")
    seed = _int(v.get("seed", "0"), "seed", minimum=0)
    sigma = _float(v.get("sigma", "1"), "sigma", positive=True)
    dim = d

    psi_q = _vector(v["psi_q"], "psi_q") if "psi_q" in v else np.zeros(dim)
    if psi_q.size == 1 and dim > 1:
        psi_q = np.full(dim, psi_q[0])
    if psi_q.size != dim:
        raise ConfigError(f"psi_q: expected length {dim}, got {psi_q.size}")
    if "Sigma_q" in v:
        Sigma_q = _matrix(v["Sigma_q"], "Sigma_q")
    else:
        Sigma_q = _float(v.get("sigma_q", "1"), "sigma_q", positive=True) ** 2 * np.eye(dim)

    raw_s0 = v.get("Sigma0")
    if raw_s0 == "block":
        bs = _int(v.get("block_size", "3"), "block_size")
        if dim % bs:
            raise ConfigError(f"Sigma0 = block: dimension {dim} is not a multiple of block_size {bs}")
        Sigma0 = block_covariance(dim // bs, bs, _float(v.get("block_var", "0.05"), "block_var", True),
                                  _float(v.get("block_corr", "0.95"), "block_corr"))
    elif raw_s0 is not None:
        Sigma0 = _matrix(raw_s0, "Sigma0")
    else:
        Sigma0 = _float(v.get("sigma0", "0.1"), "sigma0") ** 2 * np.eye(dim)
    Sigma0 = Sigma0 * _float(v.get("Sigma0_scale", "1"), "Sigma0_scale")
    for name, mat in (("Sigma_q", Sigma_q), ("Sigma0", Sigma0)):
        if mat.shape != (dim, dim):
            raise ConfigError(f"{name}: expected {dim}x{dim}, got {mat.shape[0]}x{mat.shape[1]}")
        try:
            psd_factor(mat, name)
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from None
    if family != "bernoulli" and np.linalg.eigvalsh(Sigma_q).min() <= 0:
        raise ConfigError("Sigma_q: must be positive definite")

    theta_star = None
    if "theta_star" in v:
        theta_star = _vector(v["theta_star"], "theta_star")
        if theta_star.size == 1 and dim > 1:
            theta_star = np.full(dim, theta_star[0])
        if theta_star.size != dim:
            raise ConfigError(f"theta_star: expected length {dim}, got {theta_star.size}")
    if family != "bernoulli" and setting == "frequentist" and theta_star is None:
        raise ConfigError("theta_star: required in the frequentist Gaussian setting")

    alpha_star = beta_star = None
    if family == "bernoulli":
        if "alpha_star" not in v or "beta_star" not in v:
            raise ConfigError("alpha_star, beta_star: required for bernoulli")
        alpha_star = _vector(v["alpha_star"], "alpha_star")
        beta_star = _vector(v["beta_star"], "beta_star")
        if alpha_star.size == 1:
            alpha_star = np.full(K, alpha_star[0])
        if beta_star.size == 1:
            beta_star = np.full(K, beta_star[0])
        if alpha_star.size != K or beta_star.size != K:
            raise ConfigError(f"alpha_star, beta_star: expected length K={K}")
        if np.any(alpha_star <= 0) or np.any(beta_star <= 0):
            raise ConfigError("alpha_star, beta_star: must be positive")

    arms = None
    if "arms" in v:
        if family != "linear-gaussian":
            raise ConfigError("arms: only valid for linear-gaussian")
        arms = _matrix(v["arms"], "arms")
        if arms.shape != (K, d):
            raise ConfigError(f"arms: expected {K}x{d}, got {arms.shape[0]}x{arms.shape[1]}")
        if np.any(np.linalg.norm(arms, axis=1) > 1 + 1e-12):
            raise ConfigError("arms: feature vectors must have norm <= 1")

    agents = [a.strip() for a in v.get("agents", "oracle-ts,agnostic-ts,b-metasrm,misb-metasrm,f-metasrm").split(",") if a.strip()]
    for a in agents:
        if a not in AGENTS:
            raise ConfigError(f"agents: unknown agent {a!r}; expected {AGENTS}")
    if len(set(agents)) != len(agents):
        raise ConfigError("agents: duplicate entries")
    if family == "bernoulli":
        bad = [a for a in agents if a in ("b-metasrm", "b-metasrm-ucb", "misb-metasrm")]
        if bad:
            raise ConfigError(f"agents: {bad} need a Gaussian family")

    grid_raw = v.get("m0_grid", "geometric")
    m0_grid = geometric_grid(m) if grid_raw == "geometric" else [int(x) for x in _vector(grid_raw, "m0_grid")]
    if any(x < 1 for x in m0_grid):
        raise ConfigError("m0_grid: values must be >= 1")
    t0 = _int(v.get("t0", "2"), "t0", minimum=2)
    if family == "bernoulli" and "f-metasrm" in agents and min(m0_grid) < 2 * K:
        raise ConfigError(f"m0_grid: bernoulli f-metasrm needs m0 >= 2K = {2 * K} "
                          "(two exploration tasks per arm)")
    if family == "bernoulli" and t0 > n:
        raise ConfigError(f"t0: must not exceed n={n}")
    if family != "bernoulli" and any(a.startswith("f-metasrm") for a in agents) and n < dim:
        raise ConfigError(f"n: f-metasrm needs n >= {dim} to pull the basis")
    delta = _float(v.get("delta", "0.1"), "delta")
    if not 0 < delta <= 1:
        raise ConfigError("delta: must lie in (0, 1]")
    misspec = v.get("misspec", "shift")
    if misspec not in ("shift", "per-arm"):
        raise ConfigError("misspec: expected shift or per-arm")
    workers = _int(v.get("workers", os.environ.get("METASRM_WORKERS", "1")), "workers")

    return ExperimentConfig(
        family=family, K=K, d=d, m=m, n=n, replications=reps, seed=seed, setting=setting,
        sigma=sigma, psi_q=psi_q, Sigma_q=Sigma_q, Sigma0=Sigma0, agents=agents, m0_grid=m0_grid,
        t0=t0, delta=delta, ucb_sampled_mean=_bool(v.get("ucb_sampled_mean", "false"), "ucb_sampled_mean"),
        theta_star=theta_star, alpha_star=alpha_star, beta_star=beta_star, arms=arms,
        resample_arms=_bool(v.get("resample_arms", "true"), "resample_arms"),
        misspec=misspec, misspec_radius=_float(v.get("misspec_radius", "50"), "misspec_radius", True),
        workers=workers, output=v.get("output"), raw=dict(values),
    )

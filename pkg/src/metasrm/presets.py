"""Shipped experiment presets, as raw config key/values."""
from __future__ import annotations

GAUSSIAN_COMMON = {
    "sigma": "1",
    "sigma_q": "1",
    "sigma0": "0.1",
    "n": "20",
    "replications": "100",
    "setting": "bayesian",
}

PRESETS: dict[str, dict[str, str]] = {
    # Gaussian MAB; run with K in {10, 20, 30}, e.g. --set K=20
    "gaussian-mab-fig2": {
        **GAUSSIAN_COMMON,
        "family": "gaussian-mab",
        "K": "10",
        "m": "200",
        "agents": "oracle-ts,agnostic-ts,b-metasrm,misb-metasrm,f-metasrm",
    },
    # linear bandit with K = 5d sphere arms; d in {2, 4, 8, 16} is a guess at the panels
    "linear-fig3": {
        **GAUSSIAN_COMMON,
        "family": "linear-gaussian",
        "d": "4",
        "K": "20",
        "m": "20",
        "agents": "oracle-ts,agnostic-ts,b-metasrm,misb-metasrm,f-metasrm",
    },
    "linear-10d": {
        **GAUSSIAN_COMMON,
        "family": "linear-gaussian",
        "d": "4",
        "K": "40",
        "m": "20",
        "agents": "oracle-ts,agnostic-ts,b-metasrm,misb-metasrm,f-metasrm",
    },
    # fixed prior with two strongly correlated 3-arm blocks; block values are defaults, not reported ones
    "frequentist-appD": {
        "family": "gaussian-mab",
        "setting": "frequentist",
        "K": "6",
        "m": "500",
        "n": "20",
        "replications": "50",
        "sigma": "1",
        "theta_star": "0.5,0,0,0.1,0,0",
        "Sigma0": "block",
        "block_var": "0.05",
        "block_corr": "0.95",
        "sigma_q": "1",
        "agents": "oracle-ts,agnostic-ts,b-metasrm,f-metasrm-continual",
    },
    "bernoulli-etc": {
        "family": "bernoulli",
        "setting": "frequentist",
        "K": "5",
        "m": "500",
        "n": "20",
        "replications": "20",
        "alpha_star": "2,5,1,3,4",
        "beta_star": "5,2,1,3,6",
        "t0": "5",
        "m0_grid": "50,100,200",
        "agents": "oracle-ts,agnostic-ts,f-metasrm,f-metasrm-continual",
    },
}


def preset(name: str) -> dict[str, str]:
    if name not in PRESETS:
        raise KeyError(name)
    return dict(PRESETS[name])

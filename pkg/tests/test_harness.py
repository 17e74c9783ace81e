import csv

import numpy as np
import pytest

from metasrm.cli import main
from metasrm.config import ConfigError, build_config, geometric_grid, parse_config_text
from metasrm.harness import (RESULT_HEADER, SUMMARY_HEADER, MalformedResult, environment, read_results,
                             run_experiment, run_ledger, summarize, summarize_ledger)
from metasrm.presets import PRESETS


def _cfg(**over):
    base = {"family": "gaussian-mab", "K": "4", "m": "6", "n": "8", "replications": "3", "seed": "5",
            "agents": "oracle-ts,agnostic-ts,b-metasrm,misb-metasrm,f-metasrm", "m0_grid": "1,2"}
    base.update({k: str(v) for k, v in over.items()})
    return build_config(base)


# -- config -----------------------------------------------------------------------


def test_geometric_grid():
    assert geometric_grid(200) == [1, 2, 5, 10, 20, 50, 100, 200]
    assert geometric_grid(1) == [1]


def test_config_file_format():
    vals = parse_config_text("family = linear-gaussian  # comment\n\nK = 6\nd=2\nSigma_q = 1,0;0,1\n")
    cfg = build_config(vals)
    assert cfg.dim == 2 and cfg.Sigma_q.tolist() == [[1, 0], [0, 1]]


@pytest.mark.parametrize("text,msg", [
    ("colour = red", "unknown key"),
    ("K", "expected 'key = value'"),
])
def test_config_parse_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config_text(text)


@pytest.mark.parametrize("over,msg", [
    ({"K": "0"}, "K: must be >= 1"),
    ({"family": "poisson"}, "family"),
    ({"agents": "metats"}, "unknown agent"),
    ({"Sigma0": "1,2;2,1"}, "expected 4x4"),
    ({"K": "2", "Sigma0": "1,2;2,1"}, "positive semidefinite"),
    ({"setting": "frequentist"}, "theta_star: required"),
    ({"delta": "2"}, "delta"),
    ({"psi_q": "1,2"}, "psi_q: expected length 4"),
    ({"n": "2"}, "n: f-metasrm needs"),
])
def test_config_validation(over, msg):
    with pytest.raises(ConfigError, match=msg):
        _cfg(**over)


def test_bernoulli_config_rules():
    with pytest.raises(ConfigError, match="alpha_star"):
        build_config({"family": "bernoulli", "agents": "oracle-ts"})
    with pytest.raises(ConfigError, match="m0_grid: bernoulli"):
        build_config(dict(PRESETS["bernoulli-etc"], m0_grid="5"))
    with pytest.raises(ConfigError, match="need a Gaussian family"):
        build_config({"family": "bernoulli", "alpha_star": "1", "beta_star": "1", "agents": "b-metasrm"})


def test_block_sigma0():
    cfg = build_config(dict(PRESETS["frequentist-appD"]))
    assert cfg.Sigma0.shape == (6, 6) and cfg.Sigma0[0, 2] == pytest.approx(0.0475)


def test_agent_tags_expand_m0_sweep():
    assert _cfg().agent_tags() == ["oracle-ts", "agnostic-ts", "b-metasrm", "misb-metasrm",
                                   "f-metasrm[m0=1]", "f-metasrm[m0=2]"]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    build_config(dict(PRESETS[name]))


# -- runner -----------------------------------------------------------------------


def test_one_row_per_replication_task_agent():
    cfg = _cfg()
    ledger = run_ledger(cfg)
    assert len(ledger) == 3 * 6 * len(cfg.agent_tags())
    keys = [(r[0], r[1], r[2]) for r in ledger.rows]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_agents_share_tasks():
    ledger = run_ledger(_cfg())
    fps = {}
    for rep, task, agent, *_, fp in ledger.rows:
        fps.setdefault((rep, task), set()).add(fp)
    assert all(len(v) == 1 for v in fps.values())
    assert len({next(iter(v)) for v in fps.values()}) == len(fps)


def test_adding_agents_keeps_environment_and_rows():
    small = run_ledger(_cfg(agents="oracle-ts"))
    big = run_ledger(_cfg(agents="oracle-ts,agnostic-ts,b-metasrm"))
    assert small.rows == big.select("oracle-ts").rows


def test_trivial_run(tmp_path):
    cfg = _cfg(K=1, m=1, n=1, replications=1, agents="oracle-ts,agnostic-ts,b-metasrm")
    path = run_experiment(cfg, tmp_path / "r.csv")
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == RESULT_HEADER
    assert len(rows) == 4 and all(float(r[3]) == 0.0 for r in rows[1:])


def test_determinism_and_workers(tmp_path):
    cfg = _cfg()
    a = run_experiment(cfg, tmp_path / "a.csv").read_bytes()
    b = run_experiment(cfg, tmp_path / "b.csv").read_bytes()
    c = run_experiment(cfg, tmp_path / "c.csv", workers=2).read_bytes()
    assert a == b == c
    assert run_experiment(_cfg(seed=6), tmp_path / "d.csv").read_bytes() != a


def test_seventeen_digit_floats(tmp_path):
    path = run_experiment(_cfg(), tmp_path / "r.csv")
    ledger = read_results(path)
    assert ledger.rows == run_ledger(_cfg()).rows


def test_frequentist_setting_fixes_theta():
    cfg = _cfg(setting="frequentist", theta_star="0.5,0,0,0.1", replications=2)
    p0, _, _ = environment(cfg, 0)
    p1, _, _ = environment(cfg, 1)
    assert np.array_equal(p0.theta_star, p1.theta_star)
    b0, _, _ = environment(_cfg(), 0)
    b1, _, _ = environment(_cfg(), 1)
    assert not np.array_equal(b0.theta_star, b1.theta_star)


def test_linear_and_bernoulli_families_run():
    lin = build_config({"family": "linear-gaussian", "d": "2", "K": "5", "m": "4", "n": "6",
                        "replications": "2", "m0_grid": "2",
                        "agents": "oracle-ts,agnostic-ts,b-metasrm,b-metasrm-ucb,f-metasrm,f-metasrm-continual"})
    assert len(run_ledger(lin)) == 2 * 4 * 6
    ber = build_config(dict(PRESETS["bernoulli-etc"], m="20", replications="2", m0_grid="10"))
    assert len(run_ledger(ber)) == 2 * 20 * 4


# -- summaries -----------------------------------------------------------------------


def _write(tmp_path, rows):
    path = tmp_path / "r.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_HEADER)
        w.writerows(rows)
    return path


def test_summary_single_row(tmp_path):
    text = summarize(_write(tmp_path, [(0, 1, "x", 0.25, 0.0, 5.0, "ab")]))
    lines = text.splitlines()
    assert lines[0] == ",".join(SUMMARY_HEADER)
    assert lines[1] == "1,x,0.25,0,0.25"


def test_summary_groups_and_pointwise_best(tmp_path):
    rows = []
    vals = {"f[m0=1]": (0.5, 0.1, 0.3), "f[m0=2]": (0.2, 0.4, 0.3), "f[m0=5]": (0.3, 0.3, 0.1), "ts": (1, 1, 1)}
    for agent, v in vals.items():
        rows += [(0, s + 1, agent, x, 0, 0, "") for s, x in enumerate(v)]
    out = summarize_ledger(read_results(_write(tmp_path, rows)))
    best = [r[2] for r in out if r[1] == "f[best]"]
    assert best == [0.2, 0.1, 0.1]
    assert {r[1] for r in out} == set(vals) | {"f[best]"}
    no_best = summarize_ledger(read_results(tmp_path / "r.csv"), pointwise_best=False)
    assert {r[1] for r in no_best} == set(vals)


def test_summary_recomputes_from_raw_rows(tmp_path):
    path = run_experiment(_cfg(), tmp_path / "r.csv")
    ledger = read_results(path)
    out = summarize_ledger(ledger, pointwise_best=False)
    _, vals = ledger.matrix("b-metasrm")
    mine = [r[2] for r in out if r[1] == "b-metasrm"]
    assert mine == pytest.approx(vals.mean(axis=0).tolist(), abs=0)
    assert summarize(path) == summarize(path)


@pytest.mark.parametrize("body,line", [
    ("0,1,x,0.1,0,0\n", 2),
    ("0,1,x,0.1,0,0,fp\n0,1,x,nope,0,0,fp\n", 3),
    ("0,1,x,nan,0,0,fp\n", 2),
])
def test_malformed_rows_report_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(RESULT_HEADER) + "\n" + body)
    with pytest.raises(MalformedResult, match=f":{line}:"):
        read_results(path)


def test_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n")
    with pytest.raises(MalformedResult, match=":1:"):
        read_results(path)


# -- command line -----------------------------------------------------------------------


def test_cli_run_and_summarize(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["run", "--preset", "gaussian-mab-fig2", "--set", "m=3", "--set", "K=3", "--set", "m0_grid=1",
                 "--replications", "2", "--seed", "1", "-o", str(out)])
    assert code == 0 and out.exists()
    assert main(["summarize", str(out)]) == 0
    assert capsys.readouterr().out.startswith(",".join(SUMMARY_HEADER))


def test_cli_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("family = gaussian-mab\nK = 3\nm = 2\nn = 4\nreplications = 1\nagents = oracle-ts\n")
    assert main(["validate-config", "--config", str(cfg), "--set", "K=5"]) == 0
    assert "K=5" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["validate-config", "--set", "K=0"]) == 2
    assert main(["validate-config", "--preset", "nope"]) == 2
    assert main(["run", "--set", "K=2"]) == 2
    assert main(["summarize", str(tmp_path / "missing.csv")]) == 2
    assert main(["run", "--set", "Sigma0_scale=-1", "--set", "K=2", "-o", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "K: must be >= 1" in err


def test_cli_presets_and_keys(capsys):
    assert main(["presets", "list"]) == 0
    listing = capsys.readouterr().out
    assert all(name in listing for name in PRESETS)
    assert main(["presets", "show", "linear-fig3"]) == 0
    assert "K = 20" in capsys.readouterr().out
    assert main(["keys"]) == 0
    assert "m0_grid" in capsys.readouterr().out


def test_cli_numeric_failure_exit_code(tmp_path, monkeypatch, capsys):
    import metasrm.cli as cli

    def boom(cfg):
        raise np.linalg.LinAlgError("matrix is singular")
    monkeypatch.setattr(cli, "run_experiment", boom)
    assert main(["run", "--set", "K=2", "-o", str(tmp_path / "x.csv")]) == 3
    assert "numerical error" in capsys.readouterr().err

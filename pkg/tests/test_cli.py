import hashlib
import json
import os

import pytest

from nlmeimh.cli import main
from nlmeimh.config import RunConfig, dump_config, load_config

SMALL = """
[kernel]
mala_tune_iters = 200
mala_ladder_per_decade = 4

[run]
reference_iters = 3000
reference_burn_in = 500
n_sims = 200
thresholds = 10, 100
"""


def run(*argv):
    return main([str(a) for a in argv])


def digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--out", out, "--seed", 20190101) == 0
    return out / "data.csv"


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def test_simulate_layout(data):
    out = data.parent
    assert {"data.csv", "truth.csv", "config.ini", "chains", "summaries"} <= set(os.listdir(out))
    with open(data) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "id,time,observation,dose" and len(lines) == 1 + 32 * 12


def test_map_and_propose(data, tmp_path):
    before = digest(data)
    assert run("map", "--out", tmp_path / "m", "--data", data) == 0
    summary = json.loads((tmp_path / "m" / "summaries" / "map.json").read_text())
    assert summary["n_converged"] >= 31
    assert summary["param_names"] == ["ka", "V", "k"]
    assert run("propose", "--out", tmp_path / "p", "--data", data, "--individual", "3") == 0
    props = json.loads((tmp_path / "p" / "summaries" / "proposals.json").read_text())
    entry = props["individuals"][0]
    assert entry["id"] == "3" and entry["linearized"]["kind"] == "linearized"
    assert len(entry["laplace"]["cov"]) == 3
    assert digest(data) == before


def test_sample_writes_chains(data, tmp_path, small_cfg):
    out = tmp_path / "s"
    assert run("sample", "--out", out, "--data", data, "--config", small_cfg, "--iters", 300,
               "--kernel", "nlme-imh", "--kernel", "mala") == 0
    with open(out / "chains" / "nlme-imh.csv") as fh:
        rows = fh.read().splitlines()
    assert len(rows) == 302
    summary = json.loads((out / "summaries" / "sample.json").read_text())
    assert set(summary["chains"]) == {"nlme-imh", "mala"}
    assert summary["chains"]["nlme-imh"]["acceptance_rate"] > 0.5


def test_compare_schema_and_byte_identical_rerun(data, tmp_path, small_cfg):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("compare", "--out", out, "--data", data, "--config", small_cfg,
                   "--iters", 100, "--runs", 4, "--seed", 3) == 0
        outs.append(out)
    result = json.loads((outs[0] / "summaries" / "compare.json").read_text())
    assert set(result["kernels"]) == {"rwm-componentwise", "rwm-blockwise", "mala", "nlme-imh"}
    k = result["kernels"]["nlme-imh"]
    assert k["replicates"]["thresholds"] == [10, 100]
    assert len(k["replicates"]["replicates"][0]["states"]) == 4
    assert len(k["inside_reference_iqr"]) == 2 and len(k["inside_reference_iqr"][0]) == 3
    assert result["mala_gamma"] > 0
    for root, _, files in os.walk(outs[0]):
        for f in files:
            rel = os.path.relpath(os.path.join(root, f), outs[0])
            assert digest(os.path.join(root, f)) == digest(os.path.join(outs[1], rel)), rel


def test_reference_and_eq6(data, tmp_path, small_cfg):
    assert run("reference", "--out", tmp_path / "r", "--data", data, "--config", small_cfg) == 0
    ref = json.loads((tmp_path / "r" / "summaries" / "reference.json").read_text())
    assert ref["n_iter"] == 3000
    assert run("check-eq6", "--out", tmp_path / "e", "--data", data, "--config", small_cfg) == 0
    eq6 = json.loads((tmp_path / "e" / "summaries" / "eq6.json").read_text())
    assert eq6["n_sims"] == 200 and eq6["info_gap"] >= 0


def test_written_config_reloads(data, tmp_path, small_cfg):
    out = tmp_path / "c"
    assert run("map", "--out", out, "--data", data, "--config", small_cfg, "--seed", 99) == 0
    cfg = load_config(out / "config.ini")
    assert cfg.seed == 99 and cfg.reference_iters == 3000
    assert load_config(text=dump_config(cfg)) == cfg


def test_default_config_round_trip():
    assert load_config(text=dump_config(RunConfig())) == RunConfig()


def test_unknown_kernel_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        run("sample", "--out", tmp_path, "--kernel", "hmc")
    assert info.value.code == 2


def test_malformed_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,time,observation,dose\n1,0.5,1.0,105\n1,oops,1.0,105\n")
    assert run("map", "--out", tmp_path / "o", "--data", bad) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error: DataFormatError:") and "line 3" in err[0]


def test_missing_individual(data, tmp_path, capsys):
    assert run("sample", "--out", tmp_path, "--data", data, "--individual", "999") == 1
    assert "999" in capsys.readouterr().err


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "x.ini"
    cfg.write_text("[run]\nbogus = 1\n")
    assert run("simulate", "--out", tmp_path / "o", "--config", cfg) == 1
    assert "bogus" in capsys.readouterr().err


def test_inline_comments_and_omega_rows():
    cfg = load_config(text="[theta]\nomega = 0.25, 0, 0; 0, 0.04, 0; 0, 0, 0.09  # diagonal\n"
                           "[kernel]\nproposal = laplace  # observed information\n")
    assert cfg.omega[1] == (0.0, 0.04, 0.0) and cfg.proposal == "laplace"

import io
import json
import subprocess
import sys

import numpy as np
import pytest

from stochhom.cli import ExperimentConfig, ValidationError, config_from_args, run
from stochhom.lattice import field_from_csv


def invoke(*argv):
    buf = io.StringIO()
    code = run(list(argv), stdout=buf)
    return code, buf.getvalue()


def test_corrector_constant_ensemble_is_zero(tmp_path):
    out = tmp_path / "phi.csv"
    code, _ = invoke("corrector", "--ensemble", "constant", "--T", "16", "--format", "csv", "--out", str(out))
    assert code == 0
    phi = field_from_csv(out.read_text())
    assert phi.shape == (16, 16) and np.all(phi == 0)


def test_green_row_sum_report():
    code, text = invoke("green", "--dim", "2", "--T", "64")
    rep = json.loads(text)
    assert code == 0
    assert rep["result"]["row_sum"] == pytest.approx(64, abs=1e-6)
    assert rep["config"]["size"] is None and rep["result"]["L"] == 32
    assert rep["seed"] == 0 and rep["version"]


@pytest.mark.parametrize("argv", [
    ["multiplier", "--samples", "50", "--T", "10"],
    ["cz-check", "--samples", "3", "--gamma", "0,0.25", "--sizes", "8,16"],
    ["ineq-check", "--mode", "SGp"],
    ["ineq-check", "--mode", "LSI"],
    ["helmholtz", "--samples", "1", "--size", "16"],
    ["weighted-sum", "--T-ladder", "16,64", "--samples", "2"],
    ["moments", "--samples", "3", "--T", "16"],
    ["scaling", "--T-ladder", "4,16", "--samples", "3", "--size", "8"],
])
def test_subcommands_run(argv):
    for fmt in ("json", "csv"):
        code, text = invoke(*argv, "--format", fmt)
        assert code == 0
        if fmt == "json":
            rep = json.loads(text)
            assert rep["subcommand"] == argv[0] and rep["config"]["subcommand"] == argv[0]
        else:
            assert text.startswith("# ") and "# config=" in text


def test_multiplier_report_values():
    code, text = invoke("multiplier", "--samples", "200", "--T", "1000", "--dim", "3")
    entries = json.loads(text)["result"]["entries"]
    assert len(entries) == 9
    assert max(e["identity_defect"] for e in entries) <= 1e-12


@pytest.mark.parametrize("argv,code", [
    (["cz-check", "--gamma", "0.7"], 2),
    (["moments", "--lambda", "2"], 2),
    (["moments", "--xi", "1,0,0"], 2),
    (["scaling", "--T-ladder", "64,16"], 2),
    (["green", "--T", "abc"], 2),
    (["green", "--ensemble", "no_such_preset_or_file"], 2),
    (["frobnicate"], 2),
    (["ineq-check", "--size", "5"], 4),
    (["corrector", "--T", "1e6", "--size", "16", "--tol", "1e-300"], 3),
])
def test_exit_codes(argv, code, capsys):
    assert invoke(*argv)[0] == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: ")


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dim": 3, "T": 9, "lambda": 0.5, "samples": 4,
                               "ensemble": {"preset": "two_state_diagonal"}}))
    c = config_from_args(["moments", "--config", str(cfg), "--samples", "3"]).resolved()
    assert (c.dim, c.T, c.lam, c.samples) == (3, 9, 0.5, 3)
    assert c.xi == [1.0, 0.0, 0.0]
    code, text = invoke("moments", "--config", str(cfg), "--samples", "3")
    assert code == 0 and json.loads(text)["result"]["N"] == 3
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValidationError):
        config_from_args(["moments", "--config", str(cfg)])


def test_resolved_defaults():
    assert ExperimentConfig("scaling").resolved().T_ladder == [16.0, 64.0, 256.0, 1024.0]
    assert ExperimentConfig("cz-check").resolved().p == [2]
    assert ExperimentConfig("ineq-check").resolved().size == 2


def test_byte_identical_reports(tmp_path):
    args = ["scaling", "--T-ladder", "4,16", "--samples", "4", "--size", "8", "--seed", "3", "--format", "csv"]
    invoke(*args, "--out", str(tmp_path / "a.csv"))
    invoke(*args, "--out", str(tmp_path / "b.csv"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stochhom", "multiplier", "--samples", "5"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["subcommand"] == "multiplier"

import json
import os
import subprocess
import sys

import pytest

from roughpme import config as cfgmod
from roughpme.cli import main

SMALL = {"grid": {"dim": 1, "points": 32}, "T": 0.005, "path": {"knots": 5}}


def test_parse_fills_defaults():
    cfg = cfgmod.parse_config({"m": 2})
    assert cfg["m"] == 2 and cfg["grid"]["points"] == cfgmod.DEFAULTS["grid"]["points"]
    assert cfgmod.parse_config(json.loads(cfgmod.serialize(cfg))) == cfg


def test_range_error_names_assumption():
    with pytest.raises(cfgmod.ConfigError, match=r"diffusion exponent must be positive \(.+\)"):
        cfgmod.parse_config({"m": -1})


def test_unknown_key_reports_path():
    with pytest.raises(cfgmod.ConfigError, match="config error at grid/pts"):
        cfgmod.parse_config({"grid": {"pts": 3}})
    with pytest.raises(cfgmod.ConfigError, match="config error at bogus"):
        cfgmod.parse_config({"bogus": 1})
    with pytest.raises(cfgmod.ConfigError, match="path/kind"):
        cfgmod.parse_config({"path": {"kind": "levy"}})


def test_config_file_errors(tmp_path):
    with pytest.raises(cfgmod.ConfigError, match="does not exist"):
        cfgmod.parse_config(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(cfgmod.ConfigError, match="malformed"):
        cfgmod.parse_config(tmp_path / "bad.json")


def test_experiment_keys_checked():
    cfg = cfgmod.parse_config({"experiment": {"nope": 1}})
    with pytest.raises(cfgmod.ConfigError, match="experiment/nope"):
        cfgmod.experiment_params(cfg, {"levels": [1]})


def test_builders():
    cfg = cfgmod.parse_config({**SMALL, "data": {"kind": "triangle", "mean": 0.0, "amp": 1.0}})
    g = cfgmod.build_grid(cfg)
    u = cfgmod.build_data(cfg["data"], g)
    assert abs(u.values.mean()) < 1e-14
    p1 = cfgmod.build_path(cfg, counter=(1,))
    p2 = cfgmod.build_path(cfg, counter=(1,))
    p3 = cfgmod.build_path(cfg, counter=(2,))
    assert (p1.values == p2.values).all() and not (p1.values == p3.values).all()
    assert len(cfgmod.snapshot_times(cfg)) == cfg["n_snapshots"] - 1


def test_unknown_subcommand_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_bad_config_exit_2(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"m": -1}))
    assert main(["solve", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2


def test_signature_run_and_replay(tmp_path, capsys):
    c = tmp_path / "c.json"
    c.write_text(json.dumps(SMALL))
    out = tmp_path / "sig"
    assert main(["signature", "--config", str(c), "--out", str(out), "--seed", "3"]) == 0
    for f in ("manifest.json", "report.json", "index.json", "plot.py"):
        assert (out / f).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"]["master"] == 3 and man["passed"]
    assert main(["replay", str(out / "manifest.json")]) == 0
    man["digests"] = {k: "0" * len(v) for k, v in man["digests"].items()}
    (out / "tampered.json").write_text(json.dumps(man))
    assert main(["replay", str(out / "tampered.json")]) == 1


def test_solve_writes_fields_machine_mode(tmp_path, capsys):
    c = tmp_path / "c.json"
    c.write_text(json.dumps({**SMALL, "n_snapshots": 2}))
    out = tmp_path / "s"
    assert main(["solve", "--config", str(c), "--out", str(out), "--machine"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines() if x.strip()]
    assert lines[0]["event"] == "start" and lines[-1]["event"] == "done"
    assert any(x["event"] == "assertion" for x in lines)
    assert (out / "fields" / "snapshot_0002.bin").exists()
    assert (out / "fields" / "times.csv").read_text().count("\n") == 4


def test_failure_exit_1_writes_failures(tmp_path):
    c = tmp_path / "c.json"
    c.write_text(json.dumps({**SMALL, "tolerances": {"mass_rel": -1.0}}))
    out = tmp_path / "f"
    assert main(["solve", "--config", str(c), "--out", str(out)]) == 1
    assert "mass" in json.loads((out / "failures.json").read_text())["failures"]


def test_env_out_dir_subprocess(tmp_path):
    c = tmp_path / "c.json"
    c.write_text(json.dumps(SMALL))
    env = dict(os.environ, ROUGHPME_OUT=str(tmp_path / "envout"), ROUGHPME_THREADS="1")
    r = subprocess.run([sys.executable, "-m", "roughpme", "signature", "--config", str(c)], env=env,
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "envout" / "signature" / "manifest.json").exists()

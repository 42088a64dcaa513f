import json
import subprocess
import sys

import pytest

from cransim.cli import build_parser, main, parse_set


def test_parse_set():
    assert parse_set(["a=1", "b=x", "c=[1,2]", "d=1e-10"]) == {"a": 1, "b": "x", "c": [1, 2], "d": 1e-10}
    with pytest.raises(Exception):
        parse_set(["novalue"])


def test_parser_modes():
    args = build_parser().parse_args(["run", "--config", "x.json", "--mode", "sockets"])
    assert args.mode == "sockets" and args.out == "out"
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--config", "x.json", "--mode", "bogus"])


def test_unknown_experiment_exit_code(capsys):
    assert main(["experiment", "bogus"]) == 2
    assert "tdoa-mc" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_override_exit_code(tmp_path):
    assert main(["experiment", "tdoa-mc", "--set", "experiment.foo=1", "--out", str(tmp_path)]) == 2
    assert main(["experiment", "tdoa-mc", "--set", "stations.0.cfo=abc", "--out", str(tmp_path)]) == 2


def test_experiment_success(tmp_path, capsys):
    rc = main(["experiment", "tdoa-mc", "--set", "experiment.trials=10", "--out", str(tmp_path)])
    assert rc == 0
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["experiment"] == "tdoa-mc" and line["complete"] is True


def test_run_incomplete_exit_code(tmp_path, scenario):
    # one epoch never reaches the sliding-sigma window, so sigma stays undefined
    doc = scenario.to_dict()
    doc["schedule"]["total"] = 0.0
    cfg = tmp_path / "one.json"
    cfg.write_text(json.dumps(doc))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["complete"] is False


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cransim.cli", "experiment", "nope"],
                       capture_output=True, text=True)
    assert r.returncode == 2

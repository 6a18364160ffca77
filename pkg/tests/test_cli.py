import csv
import json

import pytest

from perceptron_flow.cli import build_parser, dispatch, resolve_config


def last_row(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows[-1]


def test_fixed_point_command(tmp_path, capsys):
    code = dispatch(["fixed-point", "--lambda", "0.1", "--sigma", "0", "--out-dir", str(tmp_path)])
    assert code == 0
    row = last_row(tmp_path / "fixed_point.csv")
    assert abs(float(row["residual"])) <= 1e-10
    assert "|w*|" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "fixed-point.manifest.json").read_text())
    assert manifest["subcommand"] == "fixed-point" and manifest["config"]["lam"] == 0.1
    assert manifest["status"] == "ok" and manifest["seed"] == 0


def test_fixed_point_without_noise_or_decay_is_numerical_failure(tmp_path):
    assert dispatch(["fixed-point", "--lambda", "0", "--sigma", "0", "--out-dir", str(tmp_path)]) == 3
    manifest = json.loads((tmp_path / "fixed-point.manifest.json").read_text())
    assert manifest["status"] == "failed"


def test_flow_command_reaches_alignment(tmp_path):
    code = dispatch(["flow", "--rule", "sl", "--sigma", "1", "--lambda", "0", "--tmax", "50",
                     "--out-dir", str(tmp_path)])
    assert code == 0
    assert float(last_row(tmp_path / "flow.csv")["alignment"]) > 0.99
    assert (tmp_path / "flow.svg").read_text().startswith("<svg")


def test_help_and_usage_errors(capsys):
    assert dispatch(["forget", "--help"]) == 0
    assert "usage" in capsys.readouterr().out
    assert dispatch(["flow", "--no-such-flag"]) == 2
    assert dispatch(["no-such-command"]) == 2
    assert dispatch(["flow", "--rule", "xx"]) == 2


def test_global_flags_before_or_after_subcommand(tmp_path):
    parser = build_parser()
    a = resolve_config(parser.parse_args(["--seed", "7", "--out-dir", str(tmp_path), "simulate"]))
    b = resolve_config(parser.parse_args(["simulate", "--seed", "7", "--out-dir", str(tmp_path)]))
    assert a == b and a[2]["seed"] == 7


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "flow": {"sigma": 0.5, "lambda": 0.2, "tmax": 4.0}}))
    parser = build_parser()
    _, _, s = resolve_config(parser.parse_args(["flow", "--config", str(cfg), "--tmax", "2"]))
    assert s["sigma"] == 0.5 and s["lam"] == 0.2 and s["seed"] == 3
    assert s["tmax"] == 2.0  # flag beats file
    assert s["dt"] == 0.01  # default survives
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"flow": {"sigmaa": 1}}))
    assert dispatch(["flow", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert dispatch(["flow", "--config", str(tmp_path / "broken.json")]) == 2


def test_alias_defaults():
    parser = build_parser()
    command, alias, s = resolve_config(parser.parse_args(["fig3a"]))
    assert command == "sweep-noise" and alias == "fig3a" and s["dim"] == 500
    command, _, s = resolve_config(parser.parse_args(["fig6"]))
    assert command == "forget" and s["lam"] == 10.0 and s["eta"] == 1e-2 and s["dim"] == 500
    command, _, s = resolve_config(parser.parse_args(["fig4"]))
    assert command == "cov-decay" and s["lam"] == 0.1


def test_simulate_reproducible_bytes(tmp_path):
    args = ["simulate", "--steps", "300", "--runs", "4", "--rule", "rl", "--seed", "5"]
    assert dispatch(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert dispatch(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("simulate.csv", "simulate.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_threads_do_not_change_output(tmp_path):
    base = ["sweep-noise", "--sigmas", "0.5,1"]
    assert dispatch(base + ["--out-dir", str(tmp_path / "a")]) == 0
    assert dispatch(base + ["--threads", "2", "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "sweep_noise.csv").read_bytes() == (tmp_path / "b" / "sweep_noise.csv").read_bytes()


def test_specfun_check(tmp_path, capsys):
    assert dispatch(["specfun-check", "--out-dir", str(tmp_path)]) == 0
    assert "max" in capsys.readouterr().out.lower()

"""
Tests for the command-line surface, config loading and run artifacts.
"""

import json

import pandas as pd
import pytest
import yaml

from app.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from app.lab.exceptions import ConfigError
from app.services.artifact_writer import load_field
from app.services.spec_factory import SpecFactory

EXPERIMENT_IDS = [
    "barrier", "boundary", "comparison", "cordes", "counterexample", "flatness", "holder",
    "norm", "scale-norm", "solve", "time-reg", "weak-conv",
]


def _write(tmp_path, name, tree):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(tree), encoding="utf-8")
    return str(path)


def test_list_prints_every_experiment(capsys):
    assert main(["list"]) == EXIT_OK
    listed = [line.split()[0] for line in capsys.readouterr().out.splitlines() if line.strip()]
    assert listed == EXPERIMENT_IDS


def test_missing_arguments_are_usage_errors():
    assert main(["run"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_malformed_yaml(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("experiment: solve\ngrid: [1, 2\n", encoding="utf-8")
    assert main(["run", "--config", str(path)]) == EXIT_USAGE
    assert "line" in capsys.readouterr().err


def test_unknown_key_is_rejected(tmp_path, solve_config, capsys):
    solve_config["grid"]["spacing"] = 0.1
    assert main(["run", "--config", _write(tmp_path, "typo.yaml", solve_config)]) == EXIT_USAGE
    assert "spacing" in capsys.readouterr().err


def test_unknown_experiment(tmp_path, solve_config):
    solve_config["experiment"] = "does-not-exist"
    assert main(["run", "--config", _write(tmp_path, "unknown.yaml", solve_config)]) == EXIT_USAGE


def test_solve_run_writes_artifacts(tmp_path, solve_config, capsys):
    out = tmp_path / "run"
    code = main(["run", "--config", _write(tmp_path, "solve.yaml", solve_config), "--out", str(out)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.strip().splitlines()[-1] == str(out)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "solve"
    assert manifest["exit_code"] == 0
    assert manifest["checks"]["maximum_principle"]
    assert manifest["cfl"]["steps"] % 2 == 0
    assert "slice_0000.csv" in manifest["artifacts"]
    index = pd.read_csv(out / "slice_index.csv")
    assert index["t"].iloc[0] == pytest.approx(-1.0)
    assert index["t"].iloc[-1] == pytest.approx(-0.75)
    for row in index.itertuples():
        u = load_field(out / row.file)
        assert u.times.tolist() == pytest.approx([row.t])


def test_rerun_is_byte_identical(tmp_path, solve_config):
    config = _write(tmp_path, "solve.yaml", solve_config)
    assert main(["run", "--config", config, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", "--config", config, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("slice_0000.csv", "slice_index.csv", "residual_sub.json", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_strict_counterexample_fails_after_manifest(tmp_path):
    tree = {
        "experiment": "counterexample",
        "grid": {"n": 1, "h": 0.03125, "R_grid": 4.0},
        "operator": {"kind": "pucci_plus", "sigma": 1.0, "Lambda": 1.0},
        "params": {"C1": 0.5, "ring": True},
    }
    out = tmp_path / "strict"
    code = main(["run", "--config", _write(tmp_path, "jump.yaml", tree), "--out", str(out), "--strict"])
    assert code == EXIT_FAILED
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["strict"]
    assert "discontinuous_in_time" in manifest["flags"]
    assert manifest["exit_code"] == 1


def test_config_hash_ignores_key_order_and_output_dir(solve_config):
    reordered = dict(reversed(list(solve_config.items())))
    reordered["output_dir"] = "/tmp/elsewhere"
    first = SpecFactory.from_dict(solve_config)
    second = SpecFactory.from_dict(reordered)
    assert first.config_hash() == second.config_hash()
    solve_config["seed"] = 3
    assert SpecFactory.from_dict(solve_config).config_hash() != first.config_hash()


def test_from_dict_rejects_non_mapping():
    with pytest.raises(ConfigError):
        SpecFactory.from_dict(["solve"])


def test_json_configs_load(tmp_path, solve_config):
    path = tmp_path / "solve.json"
    path.write_text(json.dumps(solve_config), encoding="utf-8")
    config = SpecFactory.load_config(path)
    assert config.experiment == "solve"
    assert config.grid.h == 0.0625

import hashlib
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest
import yaml

from conftest import CSY_CONFIG as CSY, cli_configs
from pathbinomial import __version__
from pathbinomial.artifacts import (apply_overrides, atomic_write, canonical_json, config_hash,
                                    csv_text, load_config)
from pathbinomial.cli import COMMANDS, estimate_rows, ESTIMATE_HEADER, fixture_path, main, run
from pathbinomial.lattice import q_exact, step_logs
from pathbinomial.marketdata import load_price_series, log_returns, rolling_upturn_probability


def _run(tmp_path, command, config, name="out"):
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(yaml.safe_dump(config))
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out)])
    return code, out


def _bytes(outdir):
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}


# -- artifacts ----------------------------------------------------------------

def test_canonical_json_and_hash():
    a = canonical_json({"b": np.float64(1.5), "a": np.arange(2)})
    assert a == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5\n}\n'
    assert config_hash({"x": 1, "y": 2}) == config_hash({"y": 2, "x": 1})
    assert config_hash({"x": 1}) == hashlib.sha256(canonical_json({"x": 1}).encode()).hexdigest()


def test_csv_text_round_trips_floats():
    v = 0.1 + 0.2
    text = csv_text(["a", "b"], [(v, math.nan), (np.int64(3), "x")])
    assert text == f"a,b\n{v!r},\n3,x\n"
    assert float(text.splitlines()[1].split(",")[0]) == v


def test_atomic_write_leaves_no_temp(tmp_path):
    p = atomic_write(tmp_path / "sub" / "f.txt", "hi")
    assert p.read_text() == "hi" and [x.name for x in p.parent.iterdir()] == ["f.txt"]


def test_overrides():
    cfg = apply_overrides({"a": {"b": 1}}, ["a.b=2.5", "c=[1, 2]", "d.e=x"])
    assert cfg == {"a": {"b": 2.5}, "c": [1, 2], "d": {"e": "x"}}
    with pytest.raises(ValueError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ValueError):
        apply_overrides({"a": 1}, ["a.b=1"])


def test_load_config_rejects_non_mapping(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        load_config(p)


# -- bundled fixtures ------------------------------------------------------------

def test_price_one_step_fixture(tmp_path):
    out = tmp_path / "o"
    assert main(["price", "--config", str(fixture_path("one_step_price.yaml")), "--out", str(out)]) == 0
    doc = json.loads((out / "price.json").read_text())
    up, down = step_logs(0.08, 0.2, 0.5, 1.0)
    q = float(q_exact(up, down, 0.02, 1.0))
    oracle = math.exp(-0.02) * (q * max(100 * math.exp(up) - 95, 0) + (1 - q) * max(100 * math.exp(down) - 95, 0))
    assert doc["price"] == pytest.approx(oracle, rel=1e-13)
    assert doc["up_log"] == pytest.approx(0.26) and doc["down_log"] == pytest.approx(-0.14)
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["version"] == __version__ and man["seed"] == 0
    assert man["config_hash"] == config_hash(json.loads((out / "config.json").read_text()))
    assert man["outputs"]["price.json"] == hashlib.sha256((out / "price.json").read_bytes()).hexdigest()


def test_estimate_p_pass_through(tmp_path):
    path = fixture_path("synthetic_prices.csv")
    code, out = _run(tmp_path, "estimate-p", {"input": str(path), "window": 60})
    assert code == 0
    est = rolling_upturn_probability(log_returns(load_price_series(path)), 60)
    assert (out / "p_hat.csv").read_text() == csv_text(ESTIMATE_HEADER, estimate_rows(est))


# -- every command, twice ----------------------------------------------------------------

def test_every_command_has_a_config(cli_data):
    assert set(cli_configs(cli_data)) == set(COMMANDS)


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_rerun_byte_identical(command, cli_data, tmp_path):
    cfg = cli_configs(cli_data)[command]
    code1, out1 = _run(tmp_path, command, cfg, "a")
    code2, out2 = _run(tmp_path, command, cfg, "b")
    assert code1 == code2
    assert code1 == 0, (out1 / "manifest.json").read_text()
    assert _bytes(out1) == _bytes(out2)
    man = json.loads((out1 / "manifest.json").read_text())
    assert man["command"] == command and set(man["outputs"]) == set(_bytes(out1)) - {"config.json", "manifest.json"}


def test_rerun_overwrites_in_place(tmp_path):
    cfg = {"S0": 100, "K": 100, "mu": 0.08, "sigma": 0.2, "n": 3}
    _, out = _run(tmp_path, "price", cfg)
    first = _bytes(out)
    _, out = _run(tmp_path, "price", cfg)
    assert _bytes(out) == first


def test_seed_changes_synthetic_output(cli_data, tmp_path):
    cfg = cli_configs(cli_data)["csy-simulate"]
    _, a = _run(tmp_path, "csy-simulate", cfg, "a")
    _, b = _run(tmp_path, "csy-simulate", dict(cfg, seed=5), "b")
    assert (a / "paths.csv").read_bytes() != (b / "paths.csv").read_bytes()


def test_seed_flag_and_set_override(tmp_path):
    out = tmp_path / "o"
    code = main(["price", "--set", "S0=100", "--set", "K=90", "--set", "mu=0.1",
                 "--set", "sigma=0.3", "--seed", "9", "--out", str(out)])
    assert code == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["K"] == 90.0 and cfg["seed"] == 9


# -- exit codes -----------------------------------------------------------------------

@pytest.mark.parametrize("cfg, field", [
    ({"S0": -1, "K": 100, "mu": 0.1, "sigma": 0.2}, "S0"),
    ({"K": 100, "mu": 0.1, "sigma": 0.2}, "S0"),
    ({"S0": 100, "K": 100, "mu": 0.1, "sigma": "abc"}, "sigma"),
    ({"S0": 100, "K": 100, "mu": 0.1, "sigma": 0.2, "kind": "digital"}, "kind"),
    ({"S0": 100, "K": 100, "mu": 0.1, "sigma": 0.2, "bogus": 1}, "bogus"),
])
def test_validation_exit_code(cfg, field, tmp_path, capsys):
    code, _ = _run(tmp_path, "price", cfg)
    assert code == 2
    assert field in capsys.readouterr().err


def test_missing_input_file_is_validation(tmp_path):
    code, out = _run(tmp_path, "ingest", {"input": str(tmp_path / "nope.csv")})
    assert code == 2
    assert json.loads((out / "manifest.json").read_text())["status"] == "invalid"


def test_numerical_failure_exit_code(tmp_path):
    # drift far above the rate pushes the informed q out of (0, 1)
    cfg = {"params": dict(CSY, nu=5.0), "intensity": {"synthetic_steps": 10},
           "option": {"strike": 100, "steps": 5}, "r": 8e-5, "lam": 0.1}
    code, out = _run(tmp_path, "informed-price", cfg)
    assert code == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed" and "step" in man["message"]


def test_unknown_command():
    assert run("nope", {}, "/tmp/unused")[0] == 2
    with pytest.raises(SystemExit):
        main(["nope"])


def test_console_entry_point(tmp_path):
    exe = shutil.which("pathbinomial")
    cmd = [exe] if exe else [sys.executable, "-m", "pathbinomial.cli"]
    res = subprocess.run(cmd + ["price", "--config", str(fixture_path("one_step_price.yaml")),
                                "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "price: ok" in res.stdout

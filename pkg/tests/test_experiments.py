import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from trunc_poisson import cli
from trunc_poisson.errors import ConfigError, MissingExact
from trunc_poisson.experiments import (gap_metrics, load_config, parse_config, read_table_csv, run_oracle,
                                       run_single, run_sweep, shell_core_ratio, sweep_set)


@pytest.fixture(scope="module")
def slotted_raw():
    return load_config("slotted_queue")


def small(raw, top=60):
    raw = copy.deepcopy(raw)
    raw["partition"]["A"] = {"interval": [0, top]}
    return raw


def test_bundled_configs_parse():
    for name in ("slotted_queue", "two_mm1", "jackson"):
        cfg = parse_config(load_config(name))
        assert cfg.z == (0,) * cfg.dimension
    jackson = parse_config(load_config("jackson"))
    assert jackson.cert_r.c == pytest.approx(34.916666666666664)
    assert jackson.cert_e.c == pytest.approx(33.916666666666664)


def test_config_errors(slotted_raw):
    bad = copy.deepcopy(slotted_raw)
    bad["partition"]["zz"] = 1
    with pytest.raises(ConfigError):
        parse_config(bad)
    bad = copy.deepcopy(slotted_raw)
    del bad["model"]
    with pytest.raises(ConfigError):
        parse_config(bad)
    with pytest.raises(ConfigError):
        load_config("no_such_config")


def test_sweep_set_rounds_up():
    assert sweep_set(30, 1.5, 1)[-1] == (45,)
    assert sweep_set(4, 2.5, 2)[-1] == (10, 10)
    assert 1.12 * 6.25 > 7.0
    assert sweep_set(1.12, 6.25, 1)[-1] == (7,)


def test_run_single_outputs_and_roundtrip(tmp_path, slotted_raw):
    res = run_single(parse_config(small(slotted_raw)), tmp_path, timestamp=False)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bounds.csv", "manifest.json", "plot.gp"]
    header = (tmp_path / "bounds.csv").read_text().splitlines()[0]
    assert header == "x1,lower,upper,approx,exact,rel_gap,appr_rel_gap,abs_gap"
    back = read_table_csv(tmp_path / "bounds.csv")
    np.testing.assert_array_equal(back.lower, res.table.lower)
    np.testing.assert_array_equal(back.upper, res.table.upper)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "generated" not in manifest


def test_gap_metrics(slotted_raw):
    table = run_single(parse_config(small(slotted_raw))).table
    rep = gap_metrics(table, [(1,), (2,), (3,)])
    assert rep.sup["rel"] == pytest.approx(7.771659807425879e-05, rel=1e-6)
    with pytest.raises(ValueError):
        gap_metrics(table, [(0,), (1,)])
    table.exact = None
    with pytest.raises(MissingExact):
        gap_metrics(table, need_rel=True)
    assert gap_metrics(table).rel is None


def test_shell_core_ratio_is_large(slotted_raw):
    table = run_single(parse_config(slotted_raw)).table
    shell, core, ratio = shell_core_ratio(table, "rel")
    assert ratio >= 10 and shell > core


def test_sweep_decreases_and_is_monotone(tmp_path, slotted_raw):
    steps = run_sweep(parse_config(slotted_raw), tmp_path, rigorous=True, timestamp=False)
    sups = [s.sup["rel"] for s in steps]
    assert all(s.status == "ok" for s in steps)
    assert all(b < a for a, b in zip(sups, sups[1:]))
    assert all(s.lower_monotone for s in steps[1:])
    assert "seconds" not in (tmp_path / "sweep.csv").read_text().splitlines()[0]


def test_oracle_run(tmp_path, slotted_raw):
    raw = copy.deepcopy(slotted_raw)
    raw["oracle"] = {"box": [400]}
    out = run_oracle(parse_config(raw), tmp_path, timestamp=False)
    assert out["alpha"] == pytest.approx(8 / 3, abs=1e-12)
    assert (tmp_path / "oracle.csv").read_text().splitlines()[0] == "x1,exact"


def write_cfg(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def test_cli_exit_codes(tmp_path, slotted_raw, capsys):
    good = write_cfg(tmp_path, small(slotted_raw))
    assert cli.main(["verify-cert", "--config", good]) == 0
    assert cli.main(["run", "--config", good, "--out", str(tmp_path / "o"), "--no-timestamp"]) == 0

    weak = small(slotted_raw)
    weak["certificates"]["K"] = {"interval": [0, 3]}
    weak_path = write_cfg(tmp_path, weak, "weak.json")
    assert cli.main(["verify-cert", "--config", weak_path]) == 3
    assert cli.main(["run", "--config", weak_path, "--out", str(tmp_path / "w")]) == 3

    broken = small(slotted_raw)
    broken["extra"] = True
    capsys.readouterr()
    assert cli.main(["run", "--config", write_cfg(tmp_path, broken, "b.json"), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["code"] == 2 and err["error"] == "ConfigError"


def test_cli_gate_failure_exit_code(tmp_path, slotted_raw, monkeypatch, capsys):
    from trunc_poisson import hitting_bounds
    monkeypatch.setattr(hitting_bounds, "GATE_MARGIN", 1.0)
    path = write_cfg(tmp_path, small(slotted_raw))
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "g")]) == 4
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "TruncationTooSmall"


def test_cli_deterministic_subprocess(tmp_path, slotted_raw):
    path = write_cfg(tmp_path, small(slotted_raw))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        subprocess.run([sys.executable, "-m", "trunc_poisson.cli", "run", "--config", path,
                        "--out", str(out), "--no-timestamp"], check=True, capture_output=True)
        outs.append((out / "bounds.csv").read_bytes())
    assert outs[0] == outs[1]

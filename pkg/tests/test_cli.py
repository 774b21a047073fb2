import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from flockcrit.cli import EXIT_BLOWUP, EXIT_ERROR, EXIT_OK, EXIT_VALIDATION, main
from flockcrit.config import DEFAULTS, ConfigError, grid_values, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload, indent=2))
    return path


# ------------------------------------------------------------------- config

def test_defaults_validate_and_round_trip():
    cfg = load_config(None)
    assert cfg.data == DEFAULTS
    again = parse_config(cfg.to_json())
    assert again.data == cfg.data and again.to_json() == cfg.to_json()


@pytest.mark.parametrize("name", ["subcritical_1d_cs", "blowup_1d_cs", "vacuum_two_blob"])
def test_golden_configs_round_trip(name):
    cfg = load_config(CONFIGS / f"{name}.json")
    assert parse_config(cfg.to_json()).data == cfg.data


def test_partial_config_merges_with_defaults():
    cfg = parse_config('{"sweep": {"N": 50}}')
    assert cfg.get("sweep", "N") == 50
    assert cfg.get("sweep", "dt") == DEFAULTS["sweep"]["dt"]
    # initial data blocks are replaced wholesale, not merged
    cfg = parse_config('{"simulate": {"initial": {"kind": "two_blob"}}}')
    assert cfg.get("simulate", "initial") == {"kind": "two_blob"}


TEXT = """{
  "model": {
    "type": "CS",
    "mass": 1.0
  },
  "simulate": {
    "dt": 0.02,
    "t_end": 20.0
  }
}
"""


@pytest.mark.parametrize("old,new,line,fragment", [
    ('"type": "CS"', '"type": "XY"', 3, "model.type"),
    ('"mass": 1.0', '"mass": -1.0', 4, "model.mass"),
    ('"dt": 0.02', '"dt": "fast"', 7, "simulate.dt"),
    ('"t_end": 20.0', '"t_end": 0', 8, "simulate.t_end"),
    ('"dt": 0.02,', '"dt": 0.02,,', 7, "invalid JSON"),
])
def test_errors_report_line(old, new, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(TEXT.replace(old, new), "run.json")
    assert info.value.line == line
    assert str(info.value).startswith(f"run.json:{line}: ") and fragment in str(info.value)


def test_corrupted_kernel_table_reported_at_kernel_line():
    text = ('{\n  "model": {\n    "kernel": {"family": "tabulated", "grid": [0, 1, 2],'
            ' "values": [1.0, 1.5, 0.2]}\n  }\n}\n')
    with pytest.raises(ConfigError) as info:
        parse_config(text, "k.json")
    assert info.value.line == 3 and "kernel" in str(info.value)


@pytest.mark.parametrize("payload", [
    '[1, 2]',
    '{"bogus": {}}',
    '{"simulate": {"dimension": 2, "initial": {"kind": "profile"}}}',
    '{"simulate": {"tracers": [-1]}}',
    '{"sweep": {"V0_grid": [0.3, 0.1]}}',
    '{"sweep": {"N": 2.5}}',
    '{"validate": {"gap": {"trails": 3}}}',
])
def test_invalid_configs_rejected(payload):
    with pytest.raises(ConfigError):
        parse_config(payload)


def test_grid_values():
    assert grid_values([0.1, 0.2]) == (0.1, 0.2)
    assert grid_values({"start": 0, "stop": 1, "num": 3}) == (0.0, 0.5, 1.0)


# ---------------------------------------------------------------- commands

def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == EXIT_ERROR
    assert main(["thresholds", "--seed", "-1"]) == EXIT_ERROR
    assert main(["thresholds", "--seed", str(2 ** 64)]) == EXIT_ERROR
    assert main(["sweep", "--threads", "0"]) == EXIT_ERROR


def test_config_error_exits_one(tmp_path, capsys):
    path = write(tmp_path, "bad.json", TEXT.replace('"CS"', '"XY"'))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    assert "bad.json:3:" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR


def test_thresholds_outputs(tmp_path):
    out = tmp_path / "th"
    assert main(["thresholds", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "thresholds.json").read_text())
    gamma, Gamma = summary["majorant"][0], summary["majorant"][1]
    for name in ("sigma_plus", "sigma_minus", "mt_upper", "mt_lower", "zeta", "h", "separatrix"):
        assert (out / f"{name}.csv").exists()
    assert summary["curves"]["sigma_plus"]["anchor"] == -gamma
    assert summary["curves"]["sigma_minus"]["anchor"] == -Gamma
    assert summary["curves"]["mt_upper"]["anchor"] == -1.0
    assert summary["curves"]["zeta"]["anchor"] == summary["gap"]["B"]
    assert summary["curves"]["separatrix"]["anchor"] == -1.0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved == DEFAULTS


def test_thresholds_rejects_inadmissible_gap(tmp_path):
    path = write(tmp_path, "g.json", {"thresholds": {"B": 10.0}})
    assert main(["thresholds", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_ERROR


SHORT = {"simulate": {"initial": {"kind": "profile", "V0": 0.1, "d0": -0.3, "N": 50},
                      "t_end": 2.0, "dt": 0.05, "frame_dt": 0.5}}


def test_simulate_is_deterministic(tmp_path):
    path = write(tmp_path, "s.json", SHORT)
    for k in (1, 2):
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / f"r{k}")]) == 0
    for name in ("trajectory.csv", "diagnostics.csv", "report.json", "config.resolved.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_simulate_2d(tmp_path):
    path = write(tmp_path, "s2.json", {"simulate": {
        "dimension": 2, "initial": {"kind": "affine", "V0": 0.1, "d0": -0.2, "B0": 0.05, "N": 6},
        "t_end": 1.0, "dt": 0.05, "frame_dt": 0.5}})
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "o" / "trajectory.csv")))
    assert rows[0][:4] == ["t", "i", "x1", "x2"]


def test_sweep_deterministic_across_threads(tmp_path):
    path = write(tmp_path, "sw.json", {"sweep": {"V0_grid": [0.05, 0.2], "d0_grid": [-2.0, -0.2],
                                                 "N": 40}})
    for k in (1, 2):
        assert main(["sweep", "--config", str(path), "--out", str(tmp_path / f"t{k}"),
                     "--threads", str(k)]) == EXIT_OK
    for name in ("sweep.csv", "sweep_summary.json"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()


QUICK = {"validate": {"comparison": {"trials": 20}, "separatrix": {"triples": 5},
                      "riccati": {"instances": 50}, "gap": {"trials": 10}, "zeta": {"sets": 10},
                      "conservation": {"N": 30, "t_end": 1.0, "dt": 0.01},
                      "flocking": {"N": 50, "t_end": 5.0, "dt": 0.05},
                      "trace": {"n_axis": 5, "t_end": 0.5},
                      "h_curve": {"n_axis": 5, "t_end": 2.0}}}


def test_validate_verdicts_do_not_depend_on_seed(tmp_path, capsys):
    path = write(tmp_path, "v.json", QUICK)
    verdicts = []
    for seed in (0, 12345):
        out = tmp_path / f"v{seed}"
        assert main(["validate", "--config", str(path), "--out", str(out), "--seed", str(seed)]) == 0
        report = json.loads((out / "validation.json").read_text())
        verdicts.append({k: v["passed"] for k, v in report["checks"].items()})
    assert verdicts[0] == verdicts[1] and all(verdicts[0].values())


def test_validate_only_reproduces_full_run(tmp_path):
    path = write(tmp_path, "v.json", QUICK)
    main(["validate", "--config", str(path), "--out", str(tmp_path / "a"), "--only", "gap"])
    main(["validate", "--config", str(path), "--out", str(tmp_path / "b"),
          "--only", "riccati", "gap"])
    a = json.loads((tmp_path / "a" / "validation.json").read_text())["checks"]["gap"]
    b = json.loads((tmp_path / "b" / "validation.json").read_text())["checks"]["gap"]
    assert a["max_ratio"] == b["max_ratio"]


def test_validate_failure_exits_three(tmp_path):
    # a zero tolerance on the trace identity cannot be met in floating point
    payload = {"validate": {"trace": {"n_axis": 5, "t_end": 0.2, "tol": 0.0}}}
    path = write(tmp_path, "v.json", payload)
    assert main(["validate", "--config", str(path), "--out", str(tmp_path / "o"),
                 "--only", "trace"]) == EXIT_VALIDATION


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "flockcrit", "thresholds", "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and (tmp_path / "thresholds.json").exists()


# ------------------------------------------------------------ golden runs

@pytest.fixture(scope="module")
def golden(tmp_path_factory):
    base = tmp_path_factory.mktemp("golden")
    codes = {}
    for name in ("subcritical_1d_cs", "blowup_1d_cs", "vacuum_two_blob"):
        codes[name] = main(["simulate", "--config", str(CONFIGS / f"{name}.json"),
                            "--out", str(base / name)])
    return base, codes


def report(golden, name):
    return json.loads((golden[0] / name / "report.json").read_text())


def test_golden_subcritical(golden):
    assert golden[1]["subcritical_1d_cs"] == EXIT_OK
    rep = report(golden, "subcritical_1d_cs")
    assert rep["blowup"] is None and rep["flocking"]["passed"]
    assert rep["max_energy_increase"] <= 1e-8


def test_golden_blowup(golden):
    assert golden[1]["blowup_1d_cs"] == EXIT_BLOWUP
    rep = report(golden, "blowup_1d_cs")
    assert 0 < rep["blowup"]["T_c"] < 5.0


def test_golden_vacuum(golden):
    assert golden[1]["vacuum_two_blob"] == EXIT_OK
    rep = report(golden, "vacuum_two_blob")
    assert rep["vacuum"]["passed"] and rep["flocking"]["passed"]
    assert set(rep["vacuum"]["levels"]) == {"0.5", "1.0", "2.0"}

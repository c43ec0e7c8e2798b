import copy
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from skidimm import cli
from skidimm import config as cfgmod

SCENARIOS = [
    "ltc_asphalt",
    "ltc_crushed_concrete",
    "ltc_grass",
    "ltc_switching",
    "stc_baseline",
    "stc_four_wheel_slip",
    "stc_front_to_all",
    "stc_front_two_slip",
    "stc_right_two_slip",
]


def raw(name="ltc_switching"):
    return copy.deepcopy(cfgmod.load(name).raw)


def test_bundled_scenarios():
    assert cfgmod.list_scenarios() == SCENARIOS
    assert cfgmod.list_scenarios() == cfgmod.list_scenarios()
    for name in SCENARIOS:
        assert cfgmod.validate(name) == []
        cfg = cfgmod.load(name)
        assert cfg.name == name
        assert cfg.family == ("LTC" if name.startswith("ltc") else "STC")


def test_switching_scenarios_follow_the_schedule():
    assert [s for s in cfgmod.load("ltc_switching").schedule.segments] == [(0.0, 2), (10.0, 1), (20.0, 0)]
    stc = cfgmod.load("stc_front_to_all")
    assert stc.schedule.segments == ((0.0, 1), (10.0, 3))
    assert stc.maneuver.duration == 20.0


def test_row_sum_diagnostic_names_the_row():
    d = raw()
    d["transition"] = {"matrix": [[0.97, 0.015, 0.015], [0.5, 0.3, 0.19], [0.0, 0.0, 1.0]]}
    diags = cfgmod.validate_dict(d)
    assert len(diags) == 1
    assert "transition.matrix[1]" in diags[0]


def test_negative_dt_diagnostic():
    d = raw()
    d["dt_s"] = -0.05
    diags = cfgmod.validate_dict(d)
    assert diags and any("dt_s" in m for m in diags)


def test_validate_lists_every_violation():
    d = raw()
    d["dt_s"] = 0
    d["sensor"]["noise_cov"] = [[1.0, 2.0], [2.0, 1.0]]
    d["schedule"] = [{"start_s": 0.0, "mode": "grass"}, {"start_s": 5.0, "mode": 7}]
    d["family"] = "LTC"
    diags = cfgmod.validate_dict(d)
    assert len(diags) >= 3
    assert any("dt_s" in m for m in diags)
    assert any("sensor.noise_cov" in m for m in diags)
    assert any("schedule" in m for m in diags)
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.from_dict(d)
    assert info.value.diagnostics == diags


def test_schedule_must_increase():
    d = raw()
    d["schedule"] = [{"start_s": 0.0, "mode": 0}, {"start_s": 10.0, "mode": 1}, {"start_s": 10.0, "mode": 2}]
    assert any("schedule" in m for m in cfgmod.validate_dict(d))


def test_model_overrides():
    d = raw("stc_baseline")
    d["models"] = [{"label": "custom", "k": 0.6, "m": 0.5}, "baseline"]
    d["schedule"] = [{"start_s": 0.0, "mode": "custom"}]
    cfg = cfgmod.from_dict(d)
    assert cfg.labels == ("custom", "baseline")
    assert (cfg.models[0].k, cfg.models[0].m) == (0.6, 0.5)
    d["models"][0]["k"] = 1.5
    assert any("models[0]" in m for m in cfgmod.validate_dict(d))


def test_overrides_revalidate():
    cfg = cfgmod.load("ltc_grass").with_overrides(seed=9, probability_update="standard")
    assert cfg.seed == 9 and cfg.probability_update == "standard"
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load("ltc_grass").with_overrides(probability_update="other")


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cfgmod.validate(str(p))[0].startswith("syntax")


def read_trace(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_writes_outputs(tmp_path):
    assert cli.main(["run", "ltc_switching", "--out", str(tmp_path), "--weights"]) == 0
    out = tmp_path / "ltc_switching"
    rows = read_trace(out / "trace.csv")
    header, body = rows[0], rows[1:]
    assert len(body) == 601
    assert header[:3] == ["t", "true_mode", "dominant"]
    assert header == (["t", "true_mode", "dominant", "mu_0", "mu_1", "mu_2", "fused_V", "fused_omega",
                       "truth_V", "truth_omega", "lik_0", "lik_1", "lik_2"])
    assert body[0][0] == "0.000000" and body[-1][0] == "30.000000"
    for row in body:
        assert all("," not in v for v in row)
        assert abs(sum(float(v) for v in row[3:6]) - 1) < 1e-9
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 1
    assert summary["n_steps"] == 601
    assert len(summary["metrics"]["segment_latency_s"]) == 3
    assert set(summary["metrics"]["state_rmse"]) == {"V", "omega"}
    assert summary["config"]["name"] == "ltc_switching"
    weights = read_trace(out / "weights.csv")
    assert weights[0] == ["t", "true_mode", "mu_asphalt", "mu_grass", "mu_crushed_concrete"]
    assert len(weights) == 602


def test_run_is_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert cli.main(["run", "stc_front_to_all", "--out", str(tmp_path / sub)]) == 0
    a = (tmp_path / "a" / "stc_front_to_all" / "trace.csv").read_bytes()
    b = (tmp_path / "b" / "stc_front_to_all" / "trace.csv").read_bytes()
    assert a == b
    assert cli.main(["run", "stc_front_to_all", "--out", str(tmp_path / "c"), "--seed", "2"]) == 0
    assert (tmp_path / "c" / "stc_front_to_all" / "trace.csv").read_bytes() != a


def test_seed_and_update_flags_reach_summary(tmp_path):
    assert cli.main(["run", "ltc_grass", "--out", str(tmp_path), "--seed", "5",
                     "--probability-update", "standard"]) == 0
    summary = json.loads((tmp_path / "ltc_grass" / "summary.json").read_text())
    assert summary["seed"] == 5 and summary["probability_update"] == "standard"


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("IMM_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["run", "ltc_asphalt"]) == 0
    assert (tmp_path / "env" / "ltc_asphalt" / "trace.csv").is_file()


def test_parallel_jobs_match_serial(tmp_path):
    assert cli.main(["run", "ltc_asphalt", "ltc_grass", "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert cli.main(["run", "ltc_asphalt", "ltc_grass", "--out", str(tmp_path / "s")]) == 0
    for name in ("ltc_asphalt", "ltc_grass"):
        assert (tmp_path / "p" / name / "trace.csv").read_bytes() == (tmp_path / "s" / name / "trace.csv").read_bytes()


def test_exit_codes(tmp_path, capsys):
    bad = raw()
    bad["dt_s"] = -1
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert cli.main(["run", str(p), "--out", str(tmp_path)]) == 2
    assert "dt_s" in capsys.readouterr().err
    assert not (tmp_path / "ltc_switching").exists()
    assert cli.main(["validate", str(p)]) == 2
    assert cli.main(["validate", "ltc_grass"]) == 0
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", "ltc_asphalt", "--out", str(blocker)]) == 1


def test_list_scenarios_command(capsys):
    assert cli.main(["list-scenarios"]) == 0
    assert capsys.readouterr().out.split() == SCENARIOS


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "skidimm.cli", "validate", "stc_baseline"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"


def test_csv_is_locale_independent(tmp_path, monkeypatch):
    import locale

    try:
        locale.setlocale(locale.LC_NUMERIC, "de_DE.UTF-8")
    except locale.Error:
        pytest.skip("de_DE locale not installed")
    try:
        assert cli.main(["run", "ltc_asphalt", "--out", str(tmp_path)]) == 0
    finally:
        locale.setlocale(locale.LC_NUMERIC, "C")
    rows = read_trace(tmp_path / "ltc_asphalt" / "trace.csv")
    assert all(np.isfinite(float(v)) or v == "nan" for v in rows[2])

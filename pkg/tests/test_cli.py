import csv
import json
import math

import numpy as np
import pytest
import yaml

from uwbslam.cli import main
from uwbslam.driver import RunLog
from uwbslam.evaluation import MetricsReport, read_residuals_csv
from uwbslam.scenario import ScenarioError, bundled_names, load_scenario, parse_scenario


# ------------------------------------------------------------------ scenario files


def test_bundled_scenarios_load():
    assert {"three_features", "u_path", "u_path_drift_heavy"} <= set(bundled_names())
    for name in bundled_names():
        sc = load_scenario(name)
        assert sc.script.path_length() > 0
    u = load_scenario("u_path")
    assert u.noise.p_ghost == pytest.approx(0.3)
    assert 35.0 <= u.script.path_length() <= 45.0


def test_table_names_are_config_keys():
    sc = parse_scenario({"driver": {"alpha_r": 2.0, "dep_dist": 1.5, "min_disp": [0.01, 0.005]}})
    assert sc.driver.alpha_r == 2.0 and sc.driver.dep_dist == 1.5 and sc.driver.min_disp == (0.01, 0.005)
    assert sc.with_driver(alpha_r=4.0).driver.alpha_r == 4.0
    assert sc.with_noise(p_ghost=0.5).noise.p_ghost == 0.5


@pytest.mark.parametrize(
    "doc,field",
    [
        ({"world": {"featurez": []}}, "world.featurez"),
        ({"world": {"features": [[1.0]]}}, "world.features[0]"),
        ({"world": {"walls": [[0, 0, 1]]}}, "world.walls[0]"),
        ({"script": {"waypoints": [[1.0, 0.0], "x"]}}, "script.waypoints[1]"),
        ({"noise": {"p_ghost": 1.5}}, "noise.p_ghost"),
        ({"noise": {"aoa_range_sigma": -1}}, "noise.aoa_range_sigma"),
        ({"driver": {"alpha_q": 1}}, "driver.alpha_q"),
        ({"driver": {"w": 80}}, "driver"),
        ({"sim": {"dt": 0}}, "sim.dt"),
    ],
)
def test_scenario_errors_name_the_field(doc, field):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(doc)
    assert str(exc.value).startswith(field)


def test_yaml_error_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("name: x\nworld:\n  features: [[1, 2]\n")
    with pytest.raises(ScenarioError) as exc:
        load_scenario(p)
    assert "line" in str(exc.value)
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.yaml")


def test_scenario_file_round_trip(tmp_path):
    sc = load_scenario("three_features")
    p = tmp_path / "copy.yaml"
    p.write_text(yaml.safe_dump(sc.raw))
    again = load_scenario(p)
    assert again.driver == sc.driver and again.noise == sc.noise
    np.testing.assert_array_equal(again.world.features, sc.world.features)


# ------------------------------------------------------------------ commands


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scenario", "three_features", "--seed", "0", "--out", str(out / "a")]) == 0
    assert main(["simulate", "--scenario", "three_features", "--seed", "0", "--out", str(out / "b")]) == 0
    return out


def test_simulate_writes_parseable_files(simulated):
    d = simulated / "a"
    report = MetricsReport.from_json((d / "report.json").read_text())
    assert math.isfinite(report.rms_ate) and report.mode == "full"
    table = read_residuals_csv((d / "report_residuals.csv").read_text())
    assert len(table["t"]) == report.n_poses
    log = RunLog.read(d / "runlog.jsonl.gz")
    assert {r["type"] for r in log} == {"odom", "radar", "aoa", "feature", "snapshot", "deploy"}
    assert log.records[-1].get("final")


def test_simulate_twice_is_byte_identical(simulated):
    a = (simulated / "a" / "runlog.jsonl.gz").read_bytes()
    b = (simulated / "b" / "runlog.jsonl.gz").read_bytes()
    assert a == b


def test_replay_and_evaluate_commands(simulated, capsys, tmp_path):
    log = str(simulated / "a" / "runlog.jsonl.gz")
    assert main(["replay", "--scenario", "three_features", "--log", log, "--out", str(tmp_path / "r")]) == 0
    assert "matches" in capsys.readouterr().out
    final = json.loads((tmp_path / "r" / "replay_final.json").read_text())
    recorded = RunLog.read(log).records[-1]
    assert final["mu"] == recorded["mu"]
    assert main(["evaluate", "--scenario", "three_features", "--log", log, "--out", str(tmp_path / "e")]) == 0
    rep = MetricsReport.from_json((tmp_path / "e" / "report.json").read_text())
    orig = MetricsReport.from_json((simulated / "a" / "report.json").read_text())
    assert rep.rms_ate == pytest.approx(orig.rms_ate, abs=1e-12)


def test_missing_file_fails_with_diagnostic(tmp_path, capsys):
    assert main(["simulate", "--scenario", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["evaluate", "--scenario", "three_features", "--log", str(tmp_path / "x.jsonl"),
                 "--out", str(tmp_path)]) == 1


def test_malformed_log_fails(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"type": "odom", "t": 1, "x": 0, "y": 0, "theta": 0}\n{"type": "odom", "t": 0}\n')
    assert main(["replay", "--scenario", "three_features", "--log", str(p), "--out", str(tmp_path)]) == 1
    assert "precedes" in capsys.readouterr().err


def test_ablate_two_modes_in_requested_order(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--scenario", "three_features", "--seed", "0", "--modes", "odom_only,full",
                 "--out", str(out)]) == 0
    assert (out / "report_full.json").exists() and (out / "report_odom_only.json").exists()
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert [r["mode"] for r in rows] == ["odom_only", "full"]


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--scenario", "three_features", "--modes", "full,lidar"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_sweep_rows_and_metadata(tmp_path):
    doc = {
        "name": "short",
        "world": {},
        "script": {"start": [0, 0, 0], "speed": 0.05, "waypoints": [[3.0, 0.0]]},
        "noise": {"preset": "zero"},
    }
    sc = tmp_path / "short.yaml"
    sc.write_text(yaml.safe_dump(doc))
    out = tmp_path / "sw"
    assert main(["sweep", "--scenario", str(sc), "--param", "dep_dist", "--values", "0.5,3.0", "--seeds", "0,1",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 4
    counts = {json.loads(r["value"]): int(r["n_deployments"]) for r in rows}
    assert counts[0.5] > counts[3.0] >= 1
    assert main(["sweep", "--scenario", str(sc), "--param", "alpha_q", "--values", "1", "--out", str(out)]) == 1
    assert main(["sweep", "--scenario", str(sc), "--param", "alpha_r", "--values", ",", "--out", str(out)]) == 1

import json
import math

import numpy as np
import pytest

import microdse as m
from microdse.cli import main
from microdse.traceio import read_csv, write_csv


@pytest.fixture()
def short_config(tmp_path):
    raw = m.bundled_config_dict()
    raw["simulation"]["duration_s"] = 1.0
    raw["simulation"]["loads"]["events"][0]["time_s"] = 0.4
    raw["simulation"]["seed"] = 7
    raw["output"] = {"directory": str(tmp_path / "out")}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    return path


def run_cli(*args):
    return main([str(a) for a in args])


def test_simulate_writes_both_traces(short_config, tmp_path, capsys):
    out = tmp_path / "sim"
    assert run_cli("simulate", "--config", short_config, "--out", out) == 0
    t, cols = read_csv(out / "truth.csv")
    assert t.shape == (10001,)
    assert len(cols) == 30  # 18 states + 12 measured inputs
    assert "v_d1" in cols and "i_q23" in cols and "i_od3" in cols
    t2, cols2 = read_csv(out / "measurements.csv")
    np.testing.assert_array_equal(t, t2)
    assert not np.array_equal(cols["v_d1"], cols2["v_d1"])  # noise applied


def test_duration_zero_gives_header_only(short_config, tmp_path):
    out = tmp_path / "empty"
    assert run_cli("simulate", "--config", short_config, "--out", out, "--duration", 0) == 0
    text = (out / "truth.csv").read_text().splitlines()
    assert len(text) == 1
    assert text[0].startswith("t,v_d1,")


def test_invalid_electrical_parameter_names_field(tmp_path, capsys):
    raw = m.bundled_config_dict()
    raw["topology"]["lines"][0]["l_henry"] = -1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    assert run_cli("simulate", "--config", path, "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert "l_henry" in err


def test_unknown_config_key_rejected(tmp_path, capsys):
    raw = m.bundled_config_dict()
    raw["simulation"]["typo_key"] = 1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    assert run_cli("simulate", "--config", path, "--out", tmp_path / "o") == 1
    assert "typo_key" in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"topology": }')
    assert run_cli("simulate", "--config", path, "--out", tmp_path / "o") == 1
    assert ":1:" in capsys.readouterr().err


def test_csv_round_trip_is_value_identical(tmp_path):
    rng = np.random.default_rng(12)
    t = np.round(np.arange(50) * 1e-4, 9)
    cols = {
        "a": rng.standard_normal(50) * 1e4,
        "b": rng.standard_normal(50) * 1e-7,
    }
    path = tmp_path / "trace.csv"
    write_csv(path, t, cols)
    t2, cols2 = read_csv(path)
    np.testing.assert_array_equal(t, t2)
    for lab in cols:
        np.testing.assert_array_equal(cols[lab], cols2[lab])


def test_same_seed_reruns_are_byte_identical(short_config, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run_cli("simulate", "--config", short_config, "--out", out1) == 0
    assert run_cli("simulate", "--config", short_config, "--out", out2) == 0
    for name in ("truth.csv", "measurements.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_seed_override_changes_measurements_not_truth(short_config, tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert run_cli("simulate", "--config", short_config, "--out", out1) == 0
    assert run_cli("simulate", "--config", short_config, "--out", out2, "--seed", 8) == 0
    # no process noise configured: the truth is seed-independent
    assert (out1 / "truth.csv").read_bytes() == (out2 / "truth.csv").read_bytes()
    assert (out1 / "measurements.csv").read_bytes() != (out2 / "measurements.csv").read_bytes()


def test_event_time_override_moves_the_step(short_config, tmp_path):
    out = tmp_path / "ev"
    assert run_cli(
        "simulate", "--config", short_config, "--out", out, "--event-time", 0.8
    ) == 0
    _, cols = read_csv(out / "truth.csv")
    io = cols["i_od1"]
    assert abs(io[8000] - io[7999]) > 100.0  # step lands at t=0.8
    assert abs(io[4000] - io[3999]) < 50.0  # and no longer at t=0.4


def test_estimate_end_to_end_with_metrics(short_config, tmp_path):
    out = tmp_path / "full"
    assert run_cli("simulate", "--config", short_config, "--out", out) == 0
    assert run_cli(
        "estimate",
        "--config", short_config,
        "--out", out,
        "--truth", out / "truth.csv",
        "--measurements", out / "measurements.csv",
    ) == 0
    for name in ("local_bus1.csv", "local_bus2.csv", "local_bus3.csv", "global.csv"):
        assert (out / name).exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["channels"]) >= {"v_d1", "i_td1", "i_d12", "i_q23"}
    for entry in metrics["channels"].values():
        assert entry["windows"], entry
        for w in entry["windows"]:
            assert w["improvement_ratio"] is not None
    assert metrics["innovation"]["local_bus1"]["dim"] == 4
    assert metrics["tracking"]["local_bus1"][0]["recovery_time_s"] is not None


def test_zero_noise_estimates_are_numerically_exact(tmp_path):
    raw = m.bundled_config_dict()
    raw["simulation"]["duration_s"] = 1.0
    raw["simulation"]["loads"]["events"] = []
    for section in ("dgu", "line"):
        for key in raw["simulation"]["noise"][section]:
            raw["simulation"]["noise"][section][key] = [
                0.0 for _ in raw["simulation"]["noise"][section][key]
            ]
    path = tmp_path / "quiet.json"
    path.write_text(json.dumps(raw))
    out = tmp_path / "quiet"
    assert run_cli("simulate", "--config", path, "--out", out) == 0
    assert run_cli(
        "estimate", "--config", path, "--out", out,
        "--truth", out / "truth.csv", "--measurements", out / "measurements.csv",
    ) == 0
    truth_t, truth_cols = read_csv(out / "truth.csv")
    for bus in (1, 2, 3):
        _, est_cols = read_csv(out / f"local_bus{bus}.csv")
        for lab in (f"v_d{bus}", f"i_tq{bus}"):
            tail = slice(len(truth_t) // 2, None)
            assert np.abs(est_cols[lab][tail] - truth_cols[lab][tail]).max() < 1e-6


def test_metrics_stable_across_seeds(short_config, tmp_path):
    ratios = {}
    for seed in (7, 8):
        out = tmp_path / f"seed{seed}"
        assert run_cli("simulate", "--config", short_config, "--out", out, "--seed", seed) == 0
        assert run_cli(
            "estimate", "--config", short_config, "--out", out, "--seed", seed,
            "--truth", out / "truth.csv", "--measurements", out / "measurements.csv",
        ) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        ratios[seed] = {
            label: entry["windows"][0]["improvement_ratio"]
            for label, entry in metrics["channels"].items()
        }
    assert ratios[7] != ratios[8]
    for seed in (7, 8):
        assert all(r < 1.0 for r in ratios[seed].values()), ratios[seed]
    for label in ratios[7]:
        assert abs(ratios[7][label] - ratios[8][label]) < 0.3


def test_estimate_rejects_misaligned_traces(short_config, tmp_path, capsys):
    out = tmp_path / "mis"
    assert run_cli("simulate", "--config", short_config, "--out", out) == 0
    lines = (out / "measurements.csv").read_text().splitlines()
    (out / "measurements.csv").write_text("\n".join(lines[:-10]) + "\n")
    assert run_cli(
        "estimate", "--config", short_config, "--out", out,
        "--truth", out / "truth.csv", "--measurements", out / "measurements.csv",
    ) == 1
    assert "aligned" in capsys.readouterr().err


def test_report_outputs(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    assert run_cli("report", "--metrics", empty) == 0
    assert "no data" in capsys.readouterr().out

    metrics = {
        "scenario": "x",
        "seed": 1,
        "channels": {
            "v_d1": {
                "kind": "local",
                "windows": [
                    {
                        "window_s": [1.0, 2.0],
                        "rmse_estimate": 1.0,
                        "rmse_measurement": 4.0,
                        "improvement_ratio": 0.25,
                    }
                ],
            }
        },
        "innovation": {"local_bus1": {"mean_nis": 4.0, "dim": 4}},
        "tracking": {"local_bus1": [{"event_time_s": 2.0, "recovery_time_s": 0.01}]},
    }
    full = tmp_path / "metrics.json"
    full.write_text(json.dumps(metrics))
    assert run_cli("report", "--metrics", full) == 0
    out = capsys.readouterr().out
    assert "v_d1" in out and "0.250" in out

    broken = tmp_path / "broken.json"
    broken.write_text("not json")
    assert run_cli("report", "--metrics", broken) == 1


def test_bundled_config_matches_reference_parameters():
    raw = m.bundled_config_dict()
    topo = raw["topology"]
    assert topo["frequency_hz"] == 60.0
    dgus = {d["bus"]: d for d in topo["dgus"]}
    assert dgus[1]["r_ohm"] == 1.1e-3 and dgus[1]["l_henry"] == 90e-6
    assert dgus[1]["c_farad"] == 50e-6
    assert dgus[2]["r_ohm"] == 1.3e-3 and dgus[2]["l_henry"] == 100e-6
    assert dgus[2]["c_farad"] == 55e-6
    assert dgus[3]["r_ohm"] == 0.9e-3 and dgus[3]["l_henry"] == 110e-6
    assert dgus[3]["c_farad"] == 60e-6
    lines = {(ln["from_bus"], ln["to_bus"]): ln for ln in topo["lines"]}
    assert lines[(1, 2)]["r_ohm"] == 1.1 and lines[(1, 2)]["l_henry"] == 0.52e-3
    assert lines[(1, 3)]["r_ohm"] == 0.9 and lines[(1, 3)]["l_henry"] == 0.44e-3
    assert lines[(2, 3)]["r_ohm"] == 1.3 and lines[(2, 3)]["l_henry"] == 0.67e-3
    sim = raw["simulation"]
    assert sim["step_s"] == 0.0001
    assert sim["nominal_voltage_ll_rms"] == 13800.0
    assert sim["duration_s"] == 4.0
    assert sim["loads"]["events"][0]["time_s"] == 2.0
    assert raw["estimation"]["local_rate_hz"] == 10000.0
    assert raw["estimation"]["global_rate_hz"] == 100.0


def test_missing_config_file(tmp_path, capsys):
    assert run_cli("simulate", "--config", tmp_path / "nope.json", "--out", tmp_path) == 1
    assert "nope.json" in capsys.readouterr().err


def test_usage_error_exits_with_validation_code(capsys):
    assert run_cli("estimate") == 1  # missing required --truth/--measurements

import csv
import io
import json
import math

import numpy as np
import pytest

from soopsim import cli
from soopsim.experiment import efim_check
from soopsim.scenario_io import parse_scenario_text, reference_document, with_skew_std, write_scenario

REF = "scenarios/reference.yaml"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def static_ideal_file(tmp_path):
    """Six beacons, parked agents, exact clocks and no offsets."""
    beacons = "\n".join(
        f"""  - id: B{i + 1}
    position_m: [{40e3 * math.cos(0.3 + i * math.pi / 3)!r}, {40e3 * math.sin(0.3 + i * math.pi / 3)!r}]
    carrier_hz: {88e6 + 3e6 * i!r}
    signal: {{rms_bandwidth_hz: 5.0e4, rms_time_s: 0.5, snr: 100}}""" for i in range(6))
    text = f"""format: soopsim-scenario v1
comm_carrier_hz: 2.4e9
defaults: {{agent_skew_std: 0.0, beacon_skew_std: 0.0, offset_range_s: 0.0, seed: 3,
            init_position_std_m: 20.0, init_velocity_std_mps: 1.0}}
agents:
  - {{position_m: [-4000, 1000], velocity_mps: [0, 0]}}
  - {{position_m: [3000, -500], velocity_mps: [0, 0]}}
beacons:
{beacons}
"""
    parse_scenario_text(text)
    path = tmp_path / "static.yaml"
    path.write_text(text)
    return path


def test_crlb_csv_format(capsys, tmp_path):
    out = tmp_path / "c.csv"
    code, _, _ = run(capsys, "crlb", REF, "--out", out)
    assert code == 0
    raw = out.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    rows = rows_of(raw.decode("utf-8"))
    assert [r["variant"] for r in rows] == ["closed", "numeric", "static", "sync"]
    assert float(rows[0]["rel_frob_vs_numeric"]) < 1e-6


def test_crlb_json(capsys):
    code, out, _ = run(capsys, "crlb", REF, "--format", "json", "--offset-sweep")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == "soopsim v1" and doc["command"] == "crlb"
    assert doc["offset_sweep"]["closed_max_rel_dev"] == 0.0


def test_static_scenario_static_column_matches_closed(capsys, tmp_path):
    code, out, _ = run(capsys, "crlb", static_ideal_file(tmp_path))
    assert code == 0
    static = next(r for r in rows_of(out) if r["variant"] == "static")
    assert float(static["rel_frob_pos_vs_closed"]) == 0.0


def test_radius_sweep_eigen_ratio_decreases(capsys):
    code, out, _ = run(capsys, "crlb", REF, "--variants", "closed", "--sweep", "radius_m=3e4,1e5,3e5,1e6")
    assert code == 0
    ratios = [float(r["eig_ratio"]) for r in rows_of(out)]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


def test_simulate_noiseless_ideal_is_exact(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", static_ideal_file(tmp_path), "--trials", "1", "--noiseless")
    assert code == 0
    trial = next(r for r in rows_of(out) if r["record"] == "trial")
    assert trial["converged"] == "true"
    assert float(trial["err_p1_m"]) < 1e-6 and float(trial["err_p2_m"]) < 1e-6


def test_simulate_repeatable_across_threads(capsys, monkeypatch):
    argv = ("simulate", REF, "--trials", "6", "--seed", "11")
    monkeypatch.setenv("SOOPSIM_THREADS", "1")
    one = run(capsys, *argv)
    monkeypatch.setenv("SOOPSIM_THREADS", "4")
    four = run(capsys, *argv)
    again = run(capsys, *argv)
    assert one[0] == 0 and one[1] == four[1] == again[1]


def test_oracle_reference_passes(capsys):
    code, out, _ = run(capsys, "oracle", REF)
    assert code == 0
    assert {r["status"] for r in rows_of(out)} == {"pass"}


def test_oracle_failure_exit(capsys, tmp_path):
    doc = reference_document()
    path = tmp_path / "short.yaml"
    write_scenario(doc, path)
    text = path.read_text().replace("observation_time_s: 0.02", "observation_time_s: 0.004")
    path.write_text(text)
    code, out, err = run(capsys, "oracle", path)
    assert code == 4
    assert "oracle checks failed" in err
    assert "fail" in {r["status"] for r in rows_of(out)}


def test_invalid_input_exit(capsys, tmp_path):
    assert run(capsys, "crlb", tmp_path / "missing.yaml")[0] == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("format: soopsim-scenario v1\nwhat: 1\n")
    code, _, err = run(capsys, "crlb", bad)
    assert code == 2 and "line" in err
    with pytest.raises(SystemExit) as exc:
        cli.main(["crlb", REF, "--sweep", "colour=1,2"])
    assert exc.value.code == 2


def test_numerical_failure_exit(capsys, tmp_path):
    path = tmp_path / "wide.yaml"
    write_scenario(with_skew_std(reference_document(), 0.6), path)
    code, _, err = run(capsys, "crlb", path)
    assert code == 3 and "numerical failure" in err


def test_wide_skew_spread_is_a_regime_warning():
    row = efim_check(with_skew_std(reference_document(), 0.3).scenario)
    assert row["status"] == "regime_warning"
    assert row["observed"] > row["tolerance"]

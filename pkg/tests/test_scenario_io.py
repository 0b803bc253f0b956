import dataclasses
import math

import numpy as np
import pytest

from soopsim.errors import ScenarioParseError, ScenarioValidationError
from soopsim.scenario_io import (
    assumption_margins, dump_scenario, parse_scenario, parse_scenario_text, reference_document,
    write_scenario,
)

MINIMAL = """\
format: soopsim-scenario v1
comm_carrier_hz: 2.4e9
agents:
  - {position_m: [0, 0], velocity_mps: [0, 0]}
  - {position_m: [1000, 0], velocity_mps: [0, 0]}
beacons:
  - id: B1
    position_m: [20000, 5000]
    carrier_hz: 9.0e7
    signal: {rms_bandwidth_hz: 5.0e4, rms_time_s: 0.5, snr: 100}
"""


def fields_equal(a, b):
    if dataclasses.is_dataclass(a):
        return type(a) is type(b) and all(
            fields_equal(getattr(a, f.name), getattr(b, f.name)) for f in dataclasses.fields(a))
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(fields_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def test_round_trip_is_identity(tmp_path):
    doc = reference_document()
    path = tmp_path / "r.yaml"
    write_scenario(doc, path)
    back = parse_scenario(path)
    assert fields_equal(doc, back)
    assert dump_scenario(back) == dump_scenario(doc)


def test_shipped_reference_matches_builder():
    assert fields_equal(parse_scenario("scenarios/reference.yaml"), reference_document())


def test_minimal_file_loads():
    doc = parse_scenario_text(MINIMAL)
    assert doc.scenario.n_beacons == 1
    assert doc.scenario.agent1.clock.skew_std == doc.defaults.agent_skew_std


def test_unknown_key_reports_line():
    text = MINIMAL.replace("    carrier_hz: 9.0e7\n", "    carrier_hz: 9.0e7\n    carrier_mhz: 90\n")
    with pytest.raises(ScenarioParseError) as err:
        parse_scenario_text(text)
    assert err.value.line == 10 and "carrier_mhz" in str(err.value)


def test_skew_std_must_be_below_one():
    text = MINIMAL.replace("  - {position_m: [0, 0], velocity_mps: [0, 0]}",
                           "  - {position_m: [0, 0], velocity_mps: [0, 0], skew_std: 1.5}")
    with pytest.raises(ScenarioValidationError, match="skew_std must be < 1"):
        parse_scenario_text(text)
    with pytest.raises(ScenarioValidationError, match="skew_std must be < 1"):
        parse_scenario_text(MINIMAL + "defaults: {agent_skew_std: 1.5}\n")


def test_duplicated_beacon_id():
    extra = """  - id: B1
    position_m: [-20000, 5000]
    carrier_hz: 9.4e7
    signal: {rms_bandwidth_hz: 5.0e4, rms_time_s: 0.5, snr: 100}
"""
    with pytest.raises(ScenarioValidationError, match="duplicated beacon id"):
        parse_scenario_text(MINIMAL + extra)


@pytest.mark.parametrize("text, cls", [
    ("", ScenarioParseError),
    ("format: [unclosed\n", ScenarioParseError),
    (MINIMAL.replace("soopsim-scenario v1", "other v9"), ScenarioParseError),
    (MINIMAL.replace("carrier_hz: 9.0e7", "carrier_hz: fast"), ScenarioParseError),
    (MINIMAL.replace("carrier_hz: 9.0e7", "carrier_hz: -1"), ScenarioValidationError),
    (MINIMAL.replace("position_m: [20000, 5000]", "position_m: [0, 0]"), ScenarioValidationError),
])
def test_rejections(text, cls):
    with pytest.raises(cls):
        parse_scenario_text(text)


def test_margin_below_one_rejected():
    # a 0.5 s pulse cannot cover a 10^5 km path
    text = MINIMAL.replace("position_m: [20000, 5000]", "position_m: [1.0e8, 0]")
    with pytest.raises(ScenarioValidationError, match="delay margin"):
        parse_scenario_text(text)


def test_reference_margins():
    doc = reference_document()
    m = assumption_margins(doc.scenario, doc.defaults.offset_range_s)
    t3 = 0.5 / 3
    assert m.delay == pytest.approx(t3 / (math.hypot(50e3 * math.cos(math.pi / 12) + 5e3,
                                                     50e3 * math.sin(math.pi / 12)) / 299792458.0))
    assert m.bandwidth == pytest.approx(88e6 / 50e3)
    assert m.offset == pytest.approx(t3 / 0.01)

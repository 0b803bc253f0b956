"""Scenario files: YAML with units in every key name.

Top level::

    format: soopsim-scenario v1
    comm_carrier_hz: 2.4e9
    light_speed_mps: 299792458.0      # optional
    sample_interval_s: 1.0e-6         # optional
    observation_time_s: 1.0           # optional
    noise_psd_w_per_hz: 1.0           # optional
    defaults: {agent_skew_std, beacon_skew_std, offset_range_s, seed,
               init_position_std_m, init_velocity_std_mps}
    agents: [ {position_m, velocity_mps, skew?, offset_s?, skew_std?}, x2 ]
    beacons: [ {id, position_m, carrier_hz, signal: {...}, skew?, offset_s?, skew_std?} ]
    oracle: {rms_time_s, observation_time_s, sample_interval_s}   # optional

``signal`` takes ``pulse`` (chirp | gaussian | root_raised_cosine), ``snr`` or
``snr_db``, ``energy_j`` and the family's shape keys (``rms_bandwidth_hz`` and
``rms_time_s`` for chirp, ``rms_time_s`` for gaussian, ``symbol_period_s``,
``rolloff`` and ``span_symbols`` for root_raised_cosine).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import DegenerateGeometry, ScenarioParseError, ScenarioValidationError
from .geometry import Agent, Beacon, ClockModel, Scenario
from .signals import SignalSpec, kinematics

FORMAT_TAG = "soopsim-scenario v1"
MARGIN_TARGET = 1e3


@dataclass(frozen=True)
class ScenarioDefaults:
    agent_skew_std: float = 1e-6
    beacon_skew_std: float = 1e-6
    offset_range_s: float = 0.01
    seed: int = 0
    init_position_std_m: float = 100.0
    init_velocity_std_mps: float = 5.0


@dataclass(frozen=True)
class OracleSettings:
    """Waveform settings used only by the cross-ambiguity check.

    Unset fields fall back to the scenario's own signal and sampling values.
    """

    rms_time_s: float | None = None
    observation_time_s: float | None = None
    sample_interval_s: float | None = None


@dataclass(frozen=True)
class ScenarioDocument:
    scenario: Scenario
    defaults: ScenarioDefaults = field(default_factory=ScenarioDefaults)
    oracle: OracleSettings = field(default_factory=OracleSettings)


# ---------------------------------------------------------------------------
# YAML with line numbers


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a sign or dot, such as ``9e7``."""


_Loader.yaml_implicit_resolvers = {k: list(v) for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()}
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def _scalar(node):
    return yaml.load(yaml.serialize(node), Loader=_Loader)


def _plain(node, path=(), lines=None):
    """Convert a composed YAML node to plain Python, recording the line of every path."""
    if lines is None:
        lines = {}
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _scalar(k)
            if key in out:
                raise ScenarioParseError("duplicated key", k.start_mark.line + 1, str(key))
            out[key] = _plain(v, path + (key,), lines)[0]
        return out, lines
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), lines)[0] for i, v in enumerate(node.value)], lines
    return _scalar(node), lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def line(self, path):
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, msg, path, cls=ScenarioParseError):
        name = ".".join(str(p) for p in path) or None
        if cls is ScenarioParseError:
            raise ScenarioParseError(msg, self.line(path), name)
        where = f" (line {self.line(path)}, field {name!r})" if name else ""
        raise cls(msg + where)

    def mapping(self, obj, path, required=(), optional=()):
        if not isinstance(obj, dict):
            self.fail("expected a mapping", path)
        unknown = set(obj) - set(required) - set(optional)
        if unknown:
            key = sorted(map(str, unknown))[0]
            self.fail(f"unknown key {key!r}", path + (key,))
        for key in required:
            if key not in obj:
                self.fail(f"missing required key {key!r}", path)
        return obj

    def number(self, obj, key, path, default=None):
        if key not in obj:
            if default is None:
                self.fail(f"missing required key {key!r}", path)
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail("expected a number", path + (key,))
        if not math.isfinite(v):
            self.fail("expected a finite number", path + (key,))
        return float(v)

    def vector(self, obj, key, path):
        v = obj.get(key)
        if not isinstance(v, list) or len(v) not in (2, 3):
            self.fail("expected a list of 2 or 3 numbers", path + (key,))
        for i, c in enumerate(v):
            if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
                self.fail("expected a finite number", path + (key, i))
        return np.array(v, dtype=float)


_SIGNAL_KEYS = {
    "chirp": ("rms_bandwidth_hz", "rms_time_s"),
    "gaussian": ("rms_time_s",),
    "root_raised_cosine": ("symbol_period_s", "rolloff", "span_symbols"),
}


def _signal(rd: _Reader, obj, path) -> SignalSpec:
    pulse = obj.get("pulse", "chirp") if isinstance(obj, dict) else None
    if pulse not in _SIGNAL_KEYS:
        rd.fail(f"pulse must be one of {sorted(_SIGNAL_KEYS)}", path + ("pulse",))
    shape = _SIGNAL_KEYS[pulse]
    rd.mapping(obj, path, optional=("pulse", "snr", "snr_db", "energy_j") + shape)
    if ("snr" in obj) == ("snr_db" in obj):
        rd.fail("give exactly one of 'snr' or 'snr_db'", path)
    snr = rd.number(obj, "snr", path) if "snr" in obj else 10 ** (rd.number(obj, "snr_db", path) / 10)
    energy = rd.number(obj, "energy_j", path, 1.0)
    try:
        if pulse == "chirp":
            return SignalSpec(rd.number(obj, "rms_bandwidth_hz", path),
                              rd.number(obj, "rms_time_s", path), snr, energy)
        if pulse == "gaussian":
            return SignalSpec.gaussian(rd.number(obj, "rms_time_s", path), snr, energy)
        span = obj.get("span_symbols", 32)
        if not isinstance(span, int) or isinstance(span, bool):
            rd.fail("expected an integer", path + ("span_symbols",))
        return SignalSpec.root_raised_cosine(rd.number(obj, "symbol_period_s", path),
                                             rd.number(obj, "rolloff", path, 0.35), snr, energy, span)
    except ValueError as exc:
        rd.fail(str(exc), path, ScenarioValidationError)


def _clock(rd: _Reader, obj, path, default_std) -> ClockModel:
    std = rd.number(obj, "skew_std", path, default_std)
    if not 0 <= std < 1:
        rd.fail("skew_std must be < 1 and non-negative", path + ("skew_std",), ScenarioValidationError)
    skew = rd.number(obj, "skew", path, 1.0)
    if skew <= 0:
        rd.fail("skew must be positive", path + ("skew",), ScenarioValidationError)
    return ClockModel(skew, rd.number(obj, "offset_s", path, 0.0), std)


_CLOCK_KEYS = ("skew", "offset_s", "skew_std")


def scenario_from_dict(data, lines=None) -> ScenarioDocument:
    rd = _Reader(lines or {})
    rd.mapping(data, (), required=("format", "comm_carrier_hz", "agents", "beacons"),
               optional=("light_speed_mps", "sample_interval_s", "observation_time_s",
                         "noise_psd_w_per_hz", "defaults", "oracle"))
    if data["format"] != FORMAT_TAG:
        rd.fail(f"format must be {FORMAT_TAG!r}", ("format",))

    d = data.get("defaults", {})
    rd.mapping(d, ("defaults",), optional=tuple(ScenarioDefaults.__dataclass_fields__))
    dflt = ScenarioDefaults()
    vals = {}
    for name in ScenarioDefaults.__dataclass_fields__:
        if name == "seed":
            seed = d.get("seed", dflt.seed)
            if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
                rd.fail("seed must be a non-negative integer", ("defaults", "seed"))
            vals["seed"] = seed
        else:
            vals[name] = rd.number(d, name, ("defaults",), getattr(dflt, name))
    for name in ("agent_skew_std", "beacon_skew_std"):
        if not 0 <= vals[name] < 1:
            rd.fail("skew_std must be < 1 and non-negative", ("defaults", name), ScenarioValidationError)
    defaults = ScenarioDefaults(**vals)

    agents = data["agents"]
    if not isinstance(agents, list) or len(agents) != 2:
        rd.fail("exactly two agents required", ("agents",))
    built_agents = []
    for i, a in enumerate(agents):
        path = ("agents", i)
        rd.mapping(a, path, required=("position_m", "velocity_mps"), optional=_CLOCK_KEYS)
        p, v = rd.vector(a, "position_m", path), rd.vector(a, "velocity_mps", path)
        try:
            built_agents.append(Agent(p, v, _clock(rd, a, path, defaults.agent_skew_std)))
        except ValueError as exc:
            rd.fail(str(exc), path, ScenarioValidationError)

    beacons = data["beacons"]
    if not isinstance(beacons, list) or not beacons:
        rd.fail("at least one beacon required", ("beacons",))
    built = []
    seen = set()
    for i, b in enumerate(beacons):
        path = ("beacons", i)
        rd.mapping(b, path, required=("id", "position_m", "carrier_hz", "signal"), optional=_CLOCK_KEYS)
        bid = b["id"]
        if not isinstance(bid, str) or not bid:
            rd.fail("beacon id must be a non-empty string", path + ("id",))
        if bid in seen:
            rd.fail(f"duplicated beacon id {bid!r}", path + ("id",), ScenarioValidationError)
        seen.add(bid)
        fb = rd.number(b, "carrier_hz", path)
        if fb <= 0:
            rd.fail("carrier_hz must be positive", path + ("carrier_hz",), ScenarioValidationError)
        spec = _signal(rd, b["signal"], path + ("signal",))
        built.append(Beacon(bid, rd.vector(b, "position_m", path), fb, spec,
                            _clock(rd, b, path, defaults.beacon_skew_std)))

    o = data.get("oracle", {})
    rd.mapping(o, ("oracle",), optional=tuple(OracleSettings.__dataclass_fields__))
    oracle = OracleSettings(**{k: rd.number(o, k, ("oracle",)) for k in o})

    kwargs = {}
    for key, attr in (("light_speed_mps", "light_speed"), ("sample_interval_s", "sample_interval"),
                      ("observation_time_s", "observation_time"), ("noise_psd_w_per_hz", "noise_psd")):
        if key in data:
            kwargs[attr] = rd.number(data, key, ())
            if kwargs[attr] <= 0:
                rd.fail(f"{key} must be positive", (key,), ScenarioValidationError)
    try:
        scenario = Scenario(tuple(built), built_agents[0], built_agents[1],
                            rd.number(data, "comm_carrier_hz", ()), **kwargs)
    except (ValueError, DegenerateGeometry) as exc:
        raise ScenarioValidationError(str(exc)) from None
    return ScenarioDocument(scenario, defaults, oracle)


def parse_scenario_text(text: str) -> ScenarioDocument:
    try:
        node = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioParseError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                                 mark.line + 1 if mark else None) from None
    if node is None:
        raise ScenarioParseError("empty scenario file", 1)
    data, lines = _plain(node)
    doc = scenario_from_dict(data, lines)
    check_assumptions(doc)
    return doc


def parse_scenario(path) -> ScenarioDocument:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario_text(text)


# ---------------------------------------------------------------------------
# serialization


def _signal_dict(spec: SignalSpec) -> dict:
    out = {"pulse": spec.pulse_family, "snr": spec.snr, "energy_j": spec.energy}
    if spec.pulse_family == "chirp":
        out.update(rms_bandwidth_hz=spec.rms_bandwidth_hz, rms_time_s=spec.rms_time_s)
    elif spec.pulse_family == "gaussian":
        out.update(rms_time_s=spec.rms_time_s)
    else:
        out.update(symbol_period_s=spec.symbol_period_s, rolloff=spec.rolloff,
                   span_symbols=spec.span_symbols)
    return out


def _clock_dict(c: ClockModel) -> dict:
    return {"skew": c.skew, "offset_s": c.offset, "skew_std": c.skew_std}


def scenario_to_dict(doc: ScenarioDocument) -> dict:
    s = doc.scenario
    out = {
        "format": FORMAT_TAG,
        "comm_carrier_hz": s.comm_carrier_hz,
        "light_speed_mps": s.light_speed,
        "sample_interval_s": s.sample_interval,
        "observation_time_s": s.observation_time,
        "noise_psd_w_per_hz": s.noise_psd,
        "defaults": {k: getattr(doc.defaults, k) for k in ScenarioDefaults.__dataclass_fields__},
        "agents": [
            {"position_m": a.position.tolist(), "velocity_mps": a.velocity.tolist(), **_clock_dict(a.clock)}
            for a in (s.agent1, s.agent2)
        ],
        "beacons": [
            {"id": b.id, "position_m": b.position.tolist(), "carrier_hz": b.carrier_hz,
             "signal": _signal_dict(b.signal), **_clock_dict(b.clock)}
            for b in s.beacons
        ],
    }
    oracle = {k: v for k, v in vars(doc.oracle).items() if v is not None}
    if oracle:
        out["oracle"] = oracle
    return out


def dump_scenario(doc: ScenarioDocument) -> str:
    return yaml.safe_dump(scenario_to_dict(doc), sort_keys=False, default_flow_style=None)


def write_scenario(doc: ScenarioDocument, path) -> None:
    Path(path).write_text(dump_scenario(doc), encoding="utf-8")


# ---------------------------------------------------------------------------
# model-validity margins


@dataclass(frozen=True)
class AssumptionMargins:
    """Ratios that the narrowband and short-delay approximations need to be large.

    ``delay``: min over beacons and the link of ``(T_b / 3) / propagation delay``.
    ``bandwidth``: min of ``f_b / W_b``. ``offset``: ``(T_b / 3) / max|offset|``
    using the offset draw range.
    """

    delay: float
    bandwidth: float
    offset: float

    def all_at_least(self, target: float = MARGIN_TARGET) -> bool:
        return min(self.delay, self.bandwidth, self.offset) >= target


def assumption_margins(scenario: Scenario, offset_range_s: float = 0.0) -> AssumptionMargins:
    delay = bandwidth = offset = math.inf
    for b in scenario.beacons:
        k = kinematics(scenario, b)
        t3 = b.signal.rms_time_s / 3
        delay = min(delay, t3 / max(k.t1b, k.t2b, k.t12))
        bandwidth = min(bandwidth, b.carrier_hz / b.signal.rms_bandwidth_hz)
        offs = [abs(c.offset) for c in (scenario.agent1.clock, scenario.agent2.clock, b.clock)]
        worst = max(offs + [offset_range_s])
        if worst > 0:
            offset = min(offset, t3 / worst)
    return AssumptionMargins(delay, bandwidth, offset)


def check_assumptions(doc: ScenarioDocument) -> AssumptionMargins:
    """Reject scenarios that outright violate the model (margin below 1)."""
    m = assumption_margins(doc.scenario, doc.defaults.offset_range_s)
    for name in ("delay", "bandwidth", "offset"):
        if getattr(m, name) < 1:
            raise ScenarioValidationError(
                f"{name} margin {getattr(m, name):.3g} < 1: the narrowband/short-delay model does not apply")
    return m


# ---------------------------------------------------------------------------
# reference scenario


def reference_document() -> ScenarioDocument:
    """Six FM-band beacons on a 50 km ring; two agents 10 km apart in convoy at 30 m/s."""
    spec = SignalSpec(rms_bandwidth_hz=50e3, rms_time_s=0.5, snr=100.0)
    radius = 50e3
    beacons = []
    for i in range(6):
        ang = math.pi / 12 + i * math.pi / 3
        beacons.append(Beacon(f"B{i + 1}", [radius * math.cos(ang), radius * math.sin(ang)],
                              88e6 + 4e6 * i, spec, ClockModel(skew_std=1e-6)))
    a1 = Agent([-5e3, 0.0], [30.0, 0.0], ClockModel(skew_std=1e-6))
    a2 = Agent([5e3, 0.0], [30.0, 0.0], ClockModel(skew_std=1e-6))
    scenario = Scenario(tuple(beacons), a1, a2, 2.4e9, sample_interval=1e-6, observation_time=4.0)
    return ScenarioDocument(
        scenario,
        ScenarioDefaults(agent_skew_std=1e-6, beacon_skew_std=1e-6, offset_range_s=0.01, seed=2024),
        OracleSettings(rms_time_s=2e-3, observation_time_s=0.02, sample_interval_s=1e-6),
    )


def with_skew_std(doc: ScenarioDocument, sigma: float) -> ScenarioDocument:
    return replace(doc, scenario=doc.scenario.with_skew_std(sigma, sigma),
                   defaults=replace(doc.defaults, agent_skew_std=sigma, beacon_skew_std=sigma))

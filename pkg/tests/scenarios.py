"""Random scenario generators shared by the tests."""

import math

import numpy as np

from soopsim.geometry import Agent, Beacon, ClockModel, Scenario, sample_skew
from soopsim.scenario_io import assumption_margins
from soopsim.signals import SignalSpec


def random_scenario(rng: np.random.Generator, n_beacons: int = 4, sigma: float = 1e-6,
                    moving: bool = True, dim: int = 2) -> Scenario:
    """Generic scenario: beacons 20-80 km out, agents within 10 km, random clocks."""
    beacons = []
    for i in range(n_beacons):
        d = rng.normal(size=dim)
        pos = rng.uniform(20e3, 80e3) * d / np.linalg.norm(d)
        spec = SignalSpec(rng.uniform(10e3, 100e3), rng.uniform(0.1, 1.0), rng.uniform(10, 1000))
        clock = ClockModel(sample_skew(sigma, rng), rng.uniform(-1e-3, 1e-3), sigma)
        beacons.append(Beacon(f"B{i + 1}", pos, rng.uniform(80e6, 900e6), spec, clock))
    agents = []
    for _ in range(2):
        vel = rng.uniform(-40, 40, size=dim) if moving else np.zeros(dim)
        clock = ClockModel(sample_skew(sigma, rng), rng.uniform(-1e-3, 1e-3), sigma)
        agents.append(Agent(rng.uniform(-10e3, 10e3, size=dim), vel, clock))
    return Scenario(tuple(beacons), agents[0], agents[1], rng.uniform(1e9, 3e9),
                    sample_interval=1e-6, observation_time=4.0)


def compliant_waveform_scenario(rng: np.random.Generator, margin: float = 1e3,
                                sigma: float = 1e-6) -> Scenario:
    """Small scenario whose approximation margins all reach ``margin``.

    Delays and offsets must sit ``margin`` times below ``T_b / 3``, so the pulse
    is kept to tens of milliseconds and the geometry to a few kilometres, which
    keeps the sampled waveforms short enough for a full CAF search.
    """
    while True:
        t_rms = rng.uniform(0.03, 0.045)
        dt = 1e-5
        max_delay = t_rms / 3 / margin
        reach = 0.9 * max_delay * 299792458.0
        n = int(rng.integers(3, 6))
        beacons = []
        for i in range(n):
            ang = rng.uniform(0, 2 * math.pi)
            pos = rng.uniform(0.5, 0.8) * reach * np.array([math.cos(ang), math.sin(ang)])
            spec = SignalSpec(rng.uniform(4e3, 6e3), t_rms, rng.uniform(10, 1000))
            clock = ClockModel(sample_skew(sigma, rng), rng.uniform(-0.5, 0.5) * max_delay, sigma)
            beacons.append(Beacon(f"B{i + 1}", pos, rng.uniform(80e6, 700e6), spec, clock))
        agents = []
        for _ in range(2):
            clock = ClockModel(sample_skew(sigma, rng), rng.uniform(-0.5, 0.5) * max_delay, sigma)
            agents.append(Agent(rng.uniform(-0.1, 0.1, size=2) * reach, rng.uniform(-30, 30, size=2), clock))
        s = Scenario(tuple(beacons), agents[0], agents[1], rng.uniform(1e9, 2.5e9),
                     sample_interval=dt, observation_time=14 * t_rms)
        m = assumption_margins(s)
        if m.all_at_least(margin):
            return s


def compliant_reference(sigma: float = 1e-4) -> Scenario:
    """Reference geometry pulled in to a 30 km ring, ideal offsets: every margin at least 10^3."""
    from soopsim.experiment import scale_ring
    from soopsim.scenario_io import reference_document

    return scale_ring(reference_document().scenario, 30e3).with_skew_std(sigma, sigma)


def ring_around(scenario: Scenario, centre, radius: float) -> Scenario:
    """Move every beacon to distance ``radius`` from ``centre``, keeping its bearing from the origin."""
    import dataclasses

    centre = np.asarray(centre, dtype=float)
    beacons = tuple(dataclasses.replace(b, position=centre + radius * b.position / np.linalg.norm(b.position))
                    for b in scenario.beacons)
    return scenario.replace(beacons=beacons)


def static(scenario: Scenario) -> Scenario:
    z = np.zeros(scenario.dim)
    return scenario.with_state(scenario.agent1.position, scenario.agent2.position, z, z)

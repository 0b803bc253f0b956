"""Scenario types, kinematics (delays, Dopplers, direction vectors) and the clock model.

Positions are metres, velocities metres/second, frequencies hertz, times seconds.
Spatial vectors are plain 1-D ``numpy`` arrays of length ``L`` (2 or 3).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.stats import gamma as gamma_dist

from .errors import DegenerateGeometry, MomentUndefined

if TYPE_CHECKING:
    from .signals import SignalSpec

SPEED_OF_LIGHT = 299_792_458.0


def as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size not in (2, 3):
        raise ValueError(f"spatial vectors must have 2 or 3 components, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("spatial vector components must be finite")
    return v


@dataclass(frozen=True)
class ClockModel:
    """Local clock ``t_local = skew * t + offset``.

    ``skew_std`` is the standard deviation of the mean-one Gamma law the skew is
    drawn from; it is kept alongside the realized value because the Fisher
    information averages over that law.
    """

    skew: float = 1.0
    offset: float = 0.0
    skew_std: float = 0.0

    def __post_init__(self):
        if not self.skew > 0:
            raise ValueError(f"clock skew must be positive, got {self.skew}")
        if not 0 <= self.skew_std < 1:
            raise ValueError(f"skew_std must be in [0, 1), got {self.skew_std}")
        if not np.isfinite(self.offset):
            raise ValueError("clock offset must be finite")

    @property
    def is_ideal(self) -> bool:
        return self.skew == 1.0 and self.offset == 0.0


@dataclass(frozen=True)
class Beacon:
    id: str
    position: np.ndarray
    carrier_hz: float
    signal: SignalSpec
    clock: ClockModel = field(default_factory=ClockModel)

    def __post_init__(self):
        object.__setattr__(self, "position", as_vector(self.position))
        if not self.carrier_hz > 0:
            raise ValueError(f"beacon {self.id}: carrier_hz must be positive")


@dataclass(frozen=True)
class Agent:
    position: np.ndarray
    velocity: np.ndarray
    clock: ClockModel = field(default_factory=ClockModel)

    def __post_init__(self):
        object.__setattr__(self, "position", as_vector(self.position))
        object.__setattr__(self, "velocity", as_vector(self.velocity))
        if self.position.size != self.velocity.size:
            raise ValueError("agent position and velocity dimensions differ")


@dataclass(frozen=True)
class Scenario:
    """Beacons, the two agents, and the sampling/noise constants of one experiment."""

    beacons: tuple[Beacon, ...]
    agent1: Agent
    agent2: Agent
    comm_carrier_hz: float
    light_speed: float = SPEED_OF_LIGHT
    sample_interval: float = 1e-6
    observation_time: float = 1.0
    noise_psd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beacons", tuple(self.beacons))
        if not self.beacons:
            raise ValueError("scenario needs at least one beacon")
        dims = {b.position.size for b in self.beacons}
        dims |= {self.agent1.position.size, self.agent2.position.size}
        if len(dims) != 1:
            raise ValueError(f"mixed spatial dimensions in scenario: {sorted(dims)}")
        ids = [b.id for b in self.beacons]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicated beacon id")
        if not self.comm_carrier_hz > 0:
            raise ValueError("comm_carrier_hz must be positive")
        if not self.light_speed > 0:
            raise ValueError("light_speed must be positive")
        if np.array_equal(self.agent1.position, self.agent2.position):
            raise DegenerateGeometry("agent positions coincide")
        for b in self.beacons:
            for agent in (self.agent1, self.agent2):
                if np.array_equal(b.position, agent.position):
                    raise DegenerateGeometry(f"beacon {b.id} coincides with an agent")

    @property
    def dim(self) -> int:
        return self.agent1.position.size

    @property
    def n_beacons(self) -> int:
        return len(self.beacons)

    @property
    def n_samples(self) -> int:
        return int(round(self.observation_time / self.sample_interval))

    @property
    def is_static(self) -> bool:
        return not (np.any(self.agent1.velocity) or np.any(self.agent2.velocity))

    def beacon(self, beacon_id: str) -> Beacon:
        for b in self.beacons:
            if b.id == beacon_id:
                return b
        raise KeyError(beacon_id)

    def replace(self, **changes) -> Scenario:
        return dataclasses.replace(self, **changes)

    def with_state(self, p1, p2, v1, v2) -> Scenario:
        return self.replace(
            agent1=dataclasses.replace(self.agent1, position=p1, velocity=v1),
            agent2=dataclasses.replace(self.agent2, position=p2, velocity=v2),
        )

    def with_clocks(self, skews, offsets) -> Scenario:
        """Set realized clocks, ordered ``[agent1, agent2, beacon_1..beacon_N]``."""
        skews = list(skews)
        offsets = list(offsets)

        def clk(old, s, o):
            return ClockModel(skew=float(s), offset=float(o), skew_std=old.skew_std)

        a1 = dataclasses.replace(self.agent1, clock=clk(self.agent1.clock, skews[0], offsets[0]))
        a2 = dataclasses.replace(self.agent2, clock=clk(self.agent2.clock, skews[1], offsets[1]))
        beacons = tuple(
            dataclasses.replace(b, clock=clk(b.clock, s, o))
            for b, s, o in zip(self.beacons, skews[2:], offsets[2:], strict=True)
        )
        return self.replace(agent1=a1, agent2=a2, beacons=beacons)

    def with_skew_std(self, agents: float | None = None, beacons: float | None = None) -> Scenario:
        def upd(obj, s):
            if s is None:
                return obj
            return dataclasses.replace(obj, clock=dataclasses.replace(obj.clock, skew_std=s))

        return self.replace(
            agent1=upd(self.agent1, agents),
            agent2=upd(self.agent2, agents),
            beacons=tuple(upd(b, beacons) for b in self.beacons),
        )

    def ideal_clocks(self) -> Scenario:
        n = self.n_beacons + 2
        return self.with_clocks(np.ones(n), np.zeros(n))

    def clock_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Realized (skews, offsets) ordered ``[agent1, agent2, beacons...]``."""
        clocks = [self.agent1.clock, self.agent2.clock] + [b.clock for b in self.beacons]
        return (np.array([c.skew for c in clocks]), np.array([c.offset for c in clocks]))

    def realize_clocks(self, rng: np.random.Generator, offset_range: float = 0.01) -> Scenario:
        """Draw skews from each entity's Gamma law and offsets uniform in ±offset_range."""
        clocks = [self.agent1.clock, self.agent2.clock] + [b.clock for b in self.beacons]
        skews = [sample_skew(c.skew_std, rng) for c in clocks]
        offsets = rng.uniform(-offset_range, offset_range, size=len(clocks))
        return self.with_clocks(skews, offsets)


def unit_direction(a, b) -> np.ndarray:
    """Unit vector pointing from ``b`` to ``a``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise DegenerateGeometry("coincident points have no direction")
    return d / n


def propagation_delay(p_j, p_b, c: float = SPEED_OF_LIGHT) -> float:
    d = np.linalg.norm(np.asarray(p_j, dtype=float) - np.asarray(p_b, dtype=float))
    if d == 0.0:
        raise DegenerateGeometry("coincident points have zero delay")
    return float(d / c)


def doppler_shift(p_j, v_j, p_b, f: float, c: float = SPEED_OF_LIGHT) -> float:
    """Nominal Doppler at ``p_j`` moving with ``v_j`` for a carrier ``f`` sent from ``p_b``.

    Motion away from the transmitter gives a negative shift. For the inter-agent
    link pass the relative velocity ``v_1 - v_2`` and the link carrier.
    """
    u = unit_direction(p_j, p_b)
    return float(-(f / c) * np.dot(np.asarray(v_j, dtype=float), u))


def doppler_position_gradient(p_j, v_j, p_b, f: float) -> np.ndarray:
    """Projection of ``f * v_j`` normal to the line of sight, divided by range.

    The gradient of the Doppler shift with respect to ``p_j`` is ``-w / c``.
    """
    d = np.asarray(p_j, dtype=float) - np.asarray(p_b, dtype=float)
    r = np.linalg.norm(d)
    if r == 0.0:
        raise DegenerateGeometry("coincident points")
    u = d / r
    v = np.asarray(v_j, dtype=float)
    return f * (v - u * np.dot(u, v)) / r


def gamma_skew_moments(sigma: float) -> tuple[float, float]:
    """``(E[1/beta], E[1/beta^2])`` for beta ~ Gamma(shape=1/sigma^2, scale=sigma^2)."""
    if sigma < 0 or sigma >= 1:
        raise MomentUndefined(f"E[1/beta] needs 0 <= sigma < 1, got {sigma}")
    s2 = sigma * sigma
    if 1 - 2 * s2 <= 0:
        raise MomentUndefined(f"E[1/beta^2] needs sigma < 1/sqrt(2), got {sigma}")
    return 1.0 / (1 - s2), 1.0 / ((1 - s2) * (1 - 2 * s2))


def sample_skew(sigma: float, rng: np.random.Generator) -> float:
    """One mean-one Gamma draw with standard deviation ``sigma``; exactly 1 when sigma is 0.

    Drawn by inverse CDF from a single uniform, so equal seeds give matched
    draws across different ``sigma`` (and the stream advances by one either way).
    """
    return float(sample_skews(sigma, rng, 1)[0])


def sample_skews(sigma: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent draws of :func:`sample_skew`, consuming ``size`` uniforms."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    u = rng.random(size)
    if sigma == 0:
        return np.ones(size)
    s2 = sigma * sigma
    return gamma_dist.ppf(u, a=1.0 / s2, scale=s2)


def local_time(clock: ClockModel, t):
    return clock.skew * t + clock.offset

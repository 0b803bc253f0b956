import math

import numpy as np
import pytest

from soopsim.errors import NyquistViolation, PeakAtGridEdge, ZeroEnergy
from soopsim.geometry import Agent, Beacon, ClockModel, Scenario
from soopsim.signals import (
    ChainParams, SignalSpec, WaveformPair, caf_search, chain_params, cross_ambiguity_oracle,
    effective_baseband, intensities, kinematics, read_waveform, rms_properties, synthesize_pair, write_waveform,
)

C = 299792458.0


def small_scenario(moving=False, clocks=None, positions=((-300.0, 0.0), (0.0, 0.0), (2000.0, 0.0)), **kw):
    """Beacon, agent 2 and agent 1 on a line by default, so the relay path equals the direct path."""
    spec = SignalSpec(5e3, 0.03, 100.0)
    (b, a2, a1) = positions
    clocks = clocks or [ClockModel()] * 3
    v1, v2 = ((12.0, 5.0), (-7.0, 3.0)) if moving else ((0.0, 0.0), (0.0, 0.0))
    return Scenario((Beacon("B1", b, 9e7, spec, clocks[2]),), Agent(a1, v1, clocks[0]), Agent(a2, v2, clocks[1]),
                    1.5e9, sample_interval=kw.get("dt", 1e-5), observation_time=kw.get("t_ob", 0.42),
                    noise_psd=kw.get("noise_psd", 0.0))


def test_chain_params_ideal_static():
    s = small_scenario(positions=((-3e4, 1e4), (500.0, 200.0), (2000.0, -700.0)))
    k = kinematics(s, s.beacons[0])
    cp = chain_params(s, s.beacons[0])
    assert cp.delta == pytest.approx(k.t1b, rel=1e-15)
    assert cp.lambda_cap == pytest.approx(k.t2b + k.t12, rel=1e-15)
    assert cp.upsilon == 0.0 and cp.psi == 0.0


def test_chain_params_ideal_moving():
    s = small_scenario(moving=True, positions=((-3e4, 1e4), (500.0, 200.0), (2000.0, -700.0)))
    k = kinematics(s, s.beacons[0])
    cp = chain_params(s, s.beacons[0])
    assert cp.upsilon == pytest.approx(k.d1b, rel=1e-6)
    assert cp.psi == pytest.approx(cp.gamma_12 * k.d2b + k.d12, rel=1e-6)


def test_chain_params_agent_skew():
    s = small_scenario(clocks=[ClockModel(1 + 1e-4), ClockModel(), ClockModel()])
    cp = chain_params(s, s.beacons[0])
    assert cp.upsilon == pytest.approx(-1e-4 * 9e7, rel=1e-9)


def test_effective_baseband_arithmetic():
    cp = ChainParams(1e-3, 50.0, 0.0, 0.0, 1 + 1e-7, 1.0, 1.0)
    eb = effective_baseband(cp, 1.0, 1.0, "direct")
    assert eb.delay == pytest.approx(1e-3 / (1 + 1e-7), rel=1e-15)
    assert effective_baseband(cp, 1.0001, 1.0).freq_offset == pytest.approx(50 / 1.0001, rel=1e-15)
    with pytest.raises(ValueError):
        effective_baseband(cp, 1.0, 1.0, "sideways")


def gaussian_samples(s, dt, n=20001, shift=0.0, amp=1.0):
    t = (np.arange(n) - n // 2) * dt
    return amp * np.exp(-((t - shift) ** 2) / (2 * s * s))


def test_rms_properties_gaussian():
    s, dt = 1e-3, 1e-6
    p, w, t = rms_properties(gaussian_samples(s, dt), dt)
    assert t == pytest.approx(s / math.sqrt(2), rel=1e-3)
    assert w == pytest.approx(1 / (2 * math.sqrt(2) * math.pi * s), rel=1e-3)
    assert p == pytest.approx(s * math.sqrt(math.pi), rel=1e-3)
    p2, w2, t2 = rms_properties(gaussian_samples(s, dt, shift=2e-3), dt)
    assert (w2, t2) == pytest.approx((w, t), rel=1e-9)
    p3, w3, t3 = rms_properties(gaussian_samples(s, dt, amp=2.0), dt)
    assert p3 == pytest.approx(4 * p, rel=1e-12)
    assert (w3, t3) == pytest.approx((w, t), rel=1e-12)
    with pytest.raises(ZeroEnergy):
        rms_properties(np.zeros(8), dt)


@pytest.mark.parametrize("spec", [SignalSpec(5e3, 0.03, 1.0), SignalSpec.gaussian(0.01, 1.0),
                                  SignalSpec(2e3, 0.05, 1.0, energy=3.0)])
def test_pulse_realizes_spec(spec):
    dt = 1.0 / (8 * spec.band_edge_hz)
    t = (np.arange(int(2 * spec.time_support_s / dt)) - int(spec.time_support_s / dt)) * dt
    p, w, tr = rms_properties(spec.pulse(t), dt)
    assert p == pytest.approx(spec.energy, rel=1e-3)
    assert w == pytest.approx(spec.rms_bandwidth_hz, rel=1e-3)
    assert tr == pytest.approx(spec.rms_time_s, rel=1e-3)


def test_root_raised_cosine_spec():
    spec = SignalSpec.root_raised_cosine(1e-4, 0.35, 10.0)
    assert spec.rms_bandwidth_hz * spec.rms_time_s >= 1 / (4 * math.pi)
    assert spec.band_edge_hz == pytest.approx(1.35 / 2e-4)


def test_chirp_below_uncertainty_floor_rejected():
    with pytest.raises(ValueError):
        SignalSpec(1.0, 0.01, 1.0)


def test_intensities():
    lam, eps = intensities(SignalSpec(1.0, 1.0, 1.0), c=1.0)
    assert lam == pytest.approx(8 * math.pi**2) and eps == pytest.approx(8 * math.pi**2)
    lam2, eps2 = intensities(SignalSpec(1.0, 1.0, 2.0), c=1.0)
    assert (lam2, eps2) == pytest.approx((2 * lam, 2 * eps))
    lam4, eps4 = intensities(SignalSpec(2.0, 1.0, 1.0), c=1.0)
    assert (lam4, eps4) == pytest.approx((4 * lam, eps))


def test_equal_paths_give_identical_copies():
    s = small_scenario()
    pair = synthesize_pair(s, s.beacons[0], noise=False)
    ratio = pair.v_samples[np.abs(pair.r_samples) > 1e-3] / pair.r_samples[np.abs(pair.r_samples) > 1e-3]
    np.testing.assert_allclose(np.abs(ratio), 1.0, atol=1e-9)


def test_noiseless_samples_follow_the_closed_form():
    s = small_scenario(moving=True)
    b = s.beacons[0]
    pair = synthesize_pair(s, b, noise=False)
    eb = effective_baseband(chain_params(s, b), 1.0, 1.0, "direct")
    t = pair.times
    mu = b.signal.pulse(eb.time_scale * (t - eb.delay)) * np.exp(-2j * np.pi * eb.freq_offset * t)
    np.testing.assert_array_equal(pair.r_samples, mu)


def test_seeded_noise_is_reproducible():
    s = small_scenario(noise_psd=1e-6)
    a = synthesize_pair(s, s.beacons[0], np.random.default_rng(2))
    b = synthesize_pair(s, s.beacons[0], np.random.default_rng(2))
    np.testing.assert_array_equal(a.r_samples, b.r_samples)
    with pytest.raises(ValueError):
        synthesize_pair(s, s.beacons[0])


def test_nyquist_violation():
    s = small_scenario(dt=1e-4)
    with pytest.raises(NyquistViolation):
        synthesize_pair(s, s.beacons[0], noise=False)


def test_caf_self_correlation():
    s = small_scenario()
    pair = synthesize_pair(s, s.beacons[0], noise=False)
    selfpair = WaveformPair(pair.r_samples, pair.r_samples.copy(), pair.sample_rate_hz)
    tau, xi = caf_search(selfpair, 2e-4, 50.0)
    assert abs(tau) < 1e-9 and abs(xi) < 1e-6


def test_caf_recovers_moving_closed_form():
    s = small_scenario(moving=True, positions=((-3e4, 1e4), (500.0, 200.0), (2000.0, -700.0)),
                       clocks=[ClockModel(1 + 2e-7, 1e-5), ClockModel(1 - 1e-7, -2e-5), ClockModel(1 + 3e-7, 4e-6)])
    b = s.beacons[0]
    cp = chain_params(s, b)
    er = effective_baseband(cp, s.agent1.clock.skew, b.clock.skew, "direct")
    ev = effective_baseband(cp, s.agent1.clock.skew, b.clock.skew, "relay")
    pair = synthesize_pair(s, b, noise=False)
    tau, xi = caf_search(pair, 2e-4, 2e3)
    assert tau == pytest.approx(ev.delay - er.delay, abs=0.1 / b.signal.rms_bandwidth_hz)
    assert xi == pytest.approx(ev.freq_offset - er.freq_offset, abs=0.1 / s.observation_time)


def test_grid_oracle_static_and_edge():
    s = small_scenario(positions=((-3e4, 1e4), (500.0, 200.0), (2000.0, -700.0)))
    k = kinematics(s, s.beacons[0])
    truth = k.t2b + k.t12 - k.t1b
    pair = synthesize_pair(s, s.beacons[0], noise=False)
    step = 2e-6
    taus = truth + np.arange(-5, 6) * step + 0.3 * step
    xis = np.arange(-5, 6) * 0.5
    tau, xi = cross_ambiguity_oracle(pair, taus, xis)
    assert abs(tau - truth) < step and abs(xi) < 0.5
    with pytest.raises(PeakAtGridEdge):
        cross_ambiguity_oracle(pair, truth + 1e-4 + np.arange(5) * step, xis)


def test_caf_search_window_excluding_truth_raises():
    s = small_scenario(positions=((-3e4, 1e4), (500.0, 200.0), (2000.0, 9000.0)))
    k = kinematics(s, s.beacons[0])
    assert k.t2b + k.t12 - k.t1b > 1e-5
    pair = synthesize_pair(s, s.beacons[0], noise=False)
    with pytest.raises(PeakAtGridEdge):
        caf_search(pair, 2e-6, 20.0)


def test_waveform_round_trip(tmp_path):
    x = np.exp(1j * np.linspace(0, 3, 17)) * np.linspace(1, 2, 17)
    path = tmp_path / "w.bin"
    write_waveform(path, x, 1e6)
    y, fs = read_waveform(path)
    np.testing.assert_array_equal(x, y)
    assert fs == 1e6

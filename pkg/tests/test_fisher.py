import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soopsim.errors import NonStaticScenario, SingularNuisanceBlock
from soopsim.fisher import (
    EfimReport, Laurent, assemble_fim_y, common_offset_weight, efim_closed_form, efim_schur, efim_static,
    expected_fim_y, fim_x_expected, fim_y, gamma_moment, h_core, jacobian_J, layout_of, sampled_fim_y,
    schur_complement,
)
from soopsim.geometry import ClockModel
from soopsim.signals import SignalSpec

from scenarios import random_scenario, static


def with_clocks(s, sigma, skew=1.0):
    ck = ClockModel(skew, 0.0, sigma)
    return dataclasses.replace(
        s, beacons=tuple(dataclasses.replace(b, clock=ck) for b in s.beacons),
        agent1=dataclasses.replace(s.agent1, clock=ck), agent2=dataclasses.replace(s.agent2, clock=ck))


def test_h_core_diagonal_and_skew_scaling():
    spec = SignalSpec(3.0, 2.0, 1.0, energy=5.0)
    h = h_core(spec, 1.0, 1.0)
    k = 4 * math.pi**2 * 5.0
    np.testing.assert_allclose(h, np.diag([k * 9.0, k * 4.0]))
    h2 = h_core(spec, 1.0, 2.0)
    np.testing.assert_allclose(np.diag(h2), [h[0, 0] / 2, h[1, 1] / 8])
    h3 = h_core(spec, 3.0, 1.0)
    np.testing.assert_allclose(h3, 3 * h)


def test_laurent_arithmetic_matches_floats():
    b1, b2, bb = Laurent.var(0), Laurent.var(1), Laurent.var(2)
    expr = (b1 * b1 / bb - 3 * b2 + 2) / (bb * b2)
    # zero skew spread: every moment is one
    at_one = expr.expect((0.0, 0.0, 0.0))
    assert at_one == pytest.approx((1 - 3 + 2) / 1.0)
    s = 0.05
    assert (b1 * b1).expect((s, 0, 0)) == pytest.approx(1 + s * s)
    assert (1 / bb).expect((0, 0, s)) == pytest.approx(1 / (1 - s * s))


def test_gamma_moment_against_sampling():
    rng = np.random.default_rng(5)
    s = 0.1
    x = rng.gamma(1 / s**2, s**2, size=2_000_000)
    for k in (-3, -1, 2, 3):
        assert gamma_moment(k, s) == pytest.approx(np.mean(x**k), rel=2e-3)


def test_closed_moments_match_monte_carlo():
    s = with_clocks(random_scenario(np.random.default_rng(3), sigma=1e-2), 1e-2)
    ex = expected_fim_y(s)
    mc = sampled_fim_y(s, 400_000, seed=9)
    for a, b in zip(ex, mc):
        for m_ex, m_mc in ((a.E, b.E), (a.H, b.H), (a.K, b.K)):
            scale = np.abs(m_ex).max()
            assert np.abs(m_ex - m_mc).max() / scale < 1e-2


def test_zero_spread_reduces_to_plain_transform():
    s = with_clocks(random_scenario(np.random.default_rng(4)), 0.0)
    J = jacobian_J(s)
    direct = J @ assemble_fim_y(s, fim_y(s)) @ J.T
    np.testing.assert_allclose(fim_x_expected(s), 0.5 * (direct + direct.T), rtol=1e-12,
                               atol=1e-12 * np.abs(direct).max())


def test_schur_toy():
    s, rank = schur_complement(np.array([[2.0, 1.0], [1.0, 1.0]]), [0], [1])
    assert s[0, 0] == pytest.approx(1.0) and rank == 1


def test_schur_block_diagonal_is_untouched():
    s = random_scenario(np.random.default_rng(6))
    lay = layout_of(s)
    rng = np.random.default_rng(1)
    a = rng.normal(size=(lay.n_x, lay.n_x))
    m = a @ a.T + lay.n_x * np.eye(lay.n_x)
    st_, nu = lay.state(), lay.nuisance()
    m[np.ix_(st_, nu)] = 0
    m[np.ix_(nu, st_)] = 0
    rep = efim_schur(m, lay)
    np.testing.assert_allclose(rep.efim, m[np.ix_(st_, st_)], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_schur_of_spd_is_psd(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n + 3, n + 3))
    m = a @ a.T
    s, _ = schur_complement(m, np.arange(n), np.arange(n, n + 3))
    assert np.linalg.eigvalsh(s).min() >= -1e-9 * np.abs(m).max()


def test_common_offset_weight_zero_spread():
    assert common_offset_weight(0.0, 0.0) == 2.0


def test_bounds_of_diagonal_efim():
    a = np.array([1.0, 4.0, 9.0, 16.0, 25.0, 36.0, 49.0, 64.0])
    rep = EfimReport(np.diag(a), "t", 2)
    assert rep.rmse_bounds["p1"] == pytest.approx(math.sqrt(1 / 1 + 1 / 4))
    assert rep.rmse_bounds["v2"] == pytest.approx(math.sqrt(1 / 49 + 1 / 64))


def test_quadrupled_snr_halves_bounds():
    s = random_scenario(np.random.default_rng(8), sigma=1e-4)
    s4 = dataclasses.replace(s, beacons=tuple(
        dataclasses.replace(b, signal=dataclasses.replace(b.signal, snr=4 * b.signal.snr)) for b in s.beacons))
    for fn in (lambda z: efim_schur(fim_x_expected(z), layout_of(z)), efim_closed_form):
        b1, b4 = fn(s).rmse_bounds, fn(s4).rmse_bounds
        for k in b1:
            assert b4[k] == pytest.approx(b1[k] / 2, rel=1e-6)


def test_static_form_needs_static_agents():
    s = random_scenario(np.random.default_rng(10), moving=True)
    with pytest.raises(NonStaticScenario):
        efim_static(s)
    efim_static(static(s))


def test_strict_singular_nuisance():
    s = random_scenario(np.random.default_rng(11))
    lay = layout_of(s)
    m = np.eye(lay.n_x)
    m[lay.omega1, lay.omega1] = 0.0
    rep = efim_schur(m, lay)
    assert rep.nuisance_rank == lay.nuisance().size - 1
    with pytest.raises(SingularNuisanceBlock):
        efim_schur(m, lay, strict=True)
    with pytest.raises(SingularNuisanceBlock):
        efim_schur(np.zeros((lay.n_x, lay.n_x)), lay)


def test_closed_form_ignores_offsets():
    s = random_scenario(np.random.default_rng(12), sigma=1e-4)
    moved = dataclasses.replace(s, agent1=dataclasses.replace(
        s.agent1, clock=dataclasses.replace(s.agent1.clock, offset=0.2)))
    np.testing.assert_array_equal(efim_closed_form(s).efim, efim_closed_form(moved).efim)

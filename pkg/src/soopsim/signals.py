"""Received-signal model at agent 1: chain parameters, baseband waveforms, and a CAF oracle.

The direct copy of beacon ``b`` at agent 1 is ``g(a_r t - Delta) exp(-i 2 pi Upsilon t / beta_1)``
and the copy relayed through agent 2 is ``g(a_v t - Lambda) exp(-i 2 pi Psi t / beta_1)``,
with channel gains fixed to one and constant phases dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.optimize import minimize

from .errors import NyquistViolation, PeakAtGridEdge, ZeroEnergy
from .geometry import (
    Beacon,
    Scenario,
    SPEED_OF_LIGHT,
    doppler_shift,
    propagation_delay,
)

PULSE_FAMILIES = ("gaussian_pulse", "root_raised_cosine", "chirp")

# multiples of the RMS bandwidth that bound the occupied band of Gaussian-envelope pulses
_GAUSSIAN_SUPPORT = 5.0


@dataclass(frozen=True)
class SignalSpec:
    """Second-moment description of a beacon waveform plus the pulse used to realize it.

    ``chirp`` is a Gaussian envelope with linear FM, which reaches any
    ``W * T >= 1 / (4 pi)``; ``gaussian_pulse`` is the unchirped special case with
    ``W * T = 1 / (4 pi)``. ``root_raised_cosine`` stores its symbol period and
    roll-off; its ``W`` and ``T`` come from :meth:`root_raised_cosine`.
    """

    rms_bandwidth_hz: float
    rms_time_s: float
    snr: float
    energy: float = 1.0
    pulse_family: str = "chirp"
    symbol_period_s: float = 0.0
    rolloff: float = 0.35
    span_symbols: int = 32

    def __post_init__(self):
        if self.pulse_family not in PULSE_FAMILIES:
            raise ValueError(f"unknown pulse family {self.pulse_family!r}")
        for name in ("rms_bandwidth_hz", "rms_time_s", "snr", "energy"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        bt = self.rms_bandwidth_hz * self.rms_time_s
        floor = 1.0 / (4 * math.pi)
        if self.pulse_family == "gaussian_pulse" and not math.isclose(bt, floor, rel_tol=1e-9):
            raise ValueError("gaussian_pulse requires W*T = 1/(4 pi); use the chirp family")
        if self.pulse_family == "chirp" and bt < floor * (1 - 1e-12):
            raise ValueError(f"W*T = {bt:.4g} is below the uncertainty floor 1/(4 pi)")
        if self.pulse_family == "root_raised_cosine" and not self.symbol_period_s > 0:
            raise ValueError("root_raised_cosine needs symbol_period_s")

    @classmethod
    def gaussian(cls, rms_time_s: float, snr: float, energy: float = 1.0) -> SignalSpec:
        return cls(1.0 / (4 * math.pi * rms_time_s), rms_time_s, snr, energy, "gaussian_pulse")

    @classmethod
    def root_raised_cosine(cls, symbol_period_s: float, rolloff: float, snr: float,
                           energy: float = 1.0, span_symbols: int = 32) -> SignalSpec:
        n_per = 64
        t = np.arange(-span_symbols * n_per, span_symbols * n_per + 1) * (symbol_period_s / n_per)
        _, w, tr = rms_properties(_rrc(t, symbol_period_s, rolloff), symbol_period_s / n_per)
        return cls(w, tr, snr, energy, "root_raised_cosine", symbol_period_s, rolloff, span_symbols)

    @property
    def chirp_rate(self) -> float:
        """Linear FM rate in Hz/s (zero for the unchirped Gaussian)."""
        if self.pulse_family == "root_raised_cosine":
            return 0.0
        excess = self.rms_bandwidth_hz**2 - 1.0 / (16 * math.pi**2 * self.rms_time_s**2)
        return math.sqrt(max(excess, 0.0)) / self.rms_time_s

    @property
    def band_edge_hz(self) -> float:
        """One-sided frequency beyond which the pulse spectrum is negligible."""
        if self.pulse_family == "root_raised_cosine":
            return (1 + self.rolloff) / (2 * self.symbol_period_s)
        return _GAUSSIAN_SUPPORT * self.rms_bandwidth_hz

    @property
    def time_support_s(self) -> float:
        """Half-width outside of which the pulse is treated as zero."""
        if self.pulse_family == "root_raised_cosine":
            return self.span_symbols * self.symbol_period_s
        return 6.0 * self.rms_time_s

    def pulse(self, t) -> np.ndarray:
        """Nominal baseband pulse ``g_b(t)`` (zero time/frequency centroid, energy ``energy``)."""
        t = np.asarray(t, dtype=float)
        if self.pulse_family == "root_raised_cosine":
            g = _rrc(t, self.symbol_period_s, self.rolloff).astype(complex)
            g[np.abs(t) > self.span_symbols * self.symbol_period_s] = 0.0
            return g * math.sqrt(self.energy)
        tr = self.rms_time_s
        amp = math.sqrt(self.energy) / (2 * math.pi * tr**2) ** 0.25
        return amp * np.exp(-(t**2) / (4 * tr**2) + 1j * math.pi * self.chirp_rate * t**2)


def _rrc(t, ts, beta):
    """Unit-energy root-raised-cosine impulse response."""
    t = np.asarray(t, dtype=float)
    x = t / ts
    out = np.empty_like(x)
    at0 = np.isclose(x, 0.0, atol=1e-12)
    sing = np.isclose(np.abs(4 * beta * x), 1.0, atol=1e-9) if beta > 0 else np.zeros_like(at0)
    reg = ~(at0 | sing)
    xr = x[reg]
    num = np.sin(np.pi * xr * (1 - beta)) + 4 * beta * xr * np.cos(np.pi * xr * (1 + beta))
    den = np.pi * xr * (1 - (4 * beta * xr) ** 2)
    out[reg] = num / den
    out[at0] = 1 - beta + 4 * beta / np.pi
    if beta > 0:
        out[sing] = (beta / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
        )
    return out / math.sqrt(ts)


@dataclass(frozen=True)
class ChainParams:
    delta: float
    upsilon: float
    lambda_cap: float
    psi: float
    gamma_1b: float
    gamma_2b: float
    gamma_12: float


@dataclass(frozen=True)
class EffectiveBaseband:
    time_scale: float
    delay: float
    freq_offset: float


@dataclass(frozen=True)
class WaveformPair:
    r_samples: np.ndarray
    v_samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        if self.r_samples.shape != self.v_samples.shape:
            raise ValueError("r and v must have equal length")

    @property
    def times(self) -> np.ndarray:
        return sample_times(self.r_samples.size, 1.0 / self.sample_rate_hz)


@dataclass(frozen=True)
class Kinematics:
    """Delays, Dopplers and Doppler scale factors for one beacon."""

    t1b: float
    t2b: float
    t12: float
    d1b: float
    d2b: float
    d12: float

    def gammas(self, f_b: float, f_0: float) -> tuple[float, float, float]:
        return 1 + self.d1b / f_b, 1 + self.d2b / f_b, 1 + self.d12 / f_0


def kinematics(scenario: Scenario, beacon: Beacon) -> Kinematics:
    c = scenario.light_speed
    a1, a2 = scenario.agent1, scenario.agent2
    return Kinematics(
        t1b=propagation_delay(a1.position, beacon.position, c),
        t2b=propagation_delay(a2.position, beacon.position, c),
        t12=propagation_delay(a1.position, a2.position, c),
        d1b=doppler_shift(a1.position, a1.velocity, beacon.position, beacon.carrier_hz, c),
        d2b=doppler_shift(a2.position, a2.velocity, beacon.position, beacon.carrier_hz, c),
        d12=doppler_shift(a1.position, a1.velocity - a2.velocity, a2.position,
                          scenario.comm_carrier_hz, c),
    )


def chain_params(scenario: Scenario, beacon: Beacon) -> ChainParams:
    """Delay and frequency parameters of the direct and relayed copies of ``beacon`` at agent 1.

    Uses the realized clocks stored on the scenario's agents and the beacon.
    """
    k = kinematics(scenario, beacon)
    return chain_params_from(
        k, beacon.carrier_hz, scenario.comm_carrier_hz,
        scenario.agent1.clock.skew, scenario.agent2.clock.skew, beacon.clock.skew,
        scenario.agent1.clock.offset, scenario.agent2.clock.offset, beacon.clock.offset,
    )


def chain_params_from(k: Kinematics, f_b, f_0, beta_1, beta_2, beta_b,
                      omega_1, omega_2, omega_b) -> ChainParams:
    g1b, g2b, g12 = k.gammas(f_b, f_0)
    delta = k.t1b * beta_b - omega_1 * beta_b / beta_1 - omega_b
    upsilon = f_b * (g1b * beta_b - beta_1)
    lam = k.t2b * beta_b + k.t12 * g2b * beta_b - omega_2 * beta_b / beta_2 - omega_b
    psi = f_b * g12 * (g2b * beta_b - beta_2) + f_0 * (g12 * beta_2 - beta_1)
    return ChainParams(delta, upsilon, lam, psi, g1b, g2b, g12)


def effective_baseband(cp: ChainParams, beta_1: float, beta_b: float,
                       path: str = "direct") -> EffectiveBaseband:
    """Time scale, delay and frequency offset such that the copy is ``g(a (t - delay)) exp(-i 2 pi f t)``."""
    if path == "direct":
        a = beta_b * cp.gamma_1b / beta_1
        return EffectiveBaseband(a, cp.delta / a, cp.upsilon / beta_1)
    if path == "relay":
        a = beta_b * cp.gamma_12 * cp.gamma_2b / beta_1
        return EffectiveBaseband(a, cp.lambda_cap / a, cp.psi / beta_1)
    raise ValueError(f"path must be 'direct' or 'relay', got {path!r}")


def rms_properties(pulse, dt: float) -> tuple[float, float, float]:
    """Energy, RMS bandwidth and RMS time of a sampled pulse (centroids removed)."""
    g = np.asarray(pulse, dtype=complex)
    p2 = np.abs(g) ** 2
    total = p2.sum()
    if total == 0.0:
        raise ZeroEnergy("pulse has zero energy")
    energy = float(total * dt)
    t = np.arange(g.size) * dt
    t_c = np.sum(t * p2) / total
    t_rms = math.sqrt(np.sum((t - t_c) ** 2 * p2) / total)
    n_fft = 1 << (2 * g.size - 1).bit_length()
    spec = np.abs(np.fft.fft(g, n_fft)) ** 2
    f = np.fft.fftfreq(n_fft, dt)
    s_total = spec.sum()
    f_c = np.sum(f * spec) / s_total
    w_rms = math.sqrt(np.sum((f - f_c) ** 2 * spec) / s_total)
    return energy, w_rms, t_rms


def intensities(spec: SignalSpec, c: float = SPEED_OF_LIGHT) -> tuple[float, float]:
    """Ranging and Doppler information intensities ``(lambda_b, epsilon_b)`` in 1/m^2."""
    k = 8 * math.pi**2 * spec.snr / c**2
    return k * spec.rms_bandwidth_hz**2, k * spec.rms_time_s**2


def sample_times(n: int, dt: float) -> np.ndarray:
    """Sampling instants of an observation window centred on t = 0."""
    return (np.arange(n) - (n - 1) / 2.0) * dt


def _check_nyquist(spec: SignalSpec, eb: EffectiveBaseband, fs: float):
    need = 2 * (spec.band_edge_hz * eb.time_scale + abs(eb.freq_offset))
    if fs < need:
        raise NyquistViolation(
            f"sample rate {fs:.6g} Hz below {need:.6g} Hz; shorten sample_interval "
            f"or reduce the frequency offset"
        )


def _copy(spec: SignalSpec, eb: EffectiveBaseband, t: np.ndarray) -> np.ndarray:
    return spec.pulse(eb.time_scale * (t - eb.delay)) * np.exp(-2j * np.pi * eb.freq_offset * t)


def synthesize_pair(scenario: Scenario, beacon: Beacon, rng: np.random.Generator | None = None,
                    noise: bool = True) -> WaveformPair:
    """Sample the direct and relayed copies of ``beacon`` at agent 1.

    Noise is complex white Gaussian with per-sample variance ``noise_psd / T``.
    """
    if beacon.signal.energy <= 0:
        raise ZeroEnergy(f"beacon {beacon.id} has zero energy")
    cp = chain_params(scenario, beacon)
    b1, bb = scenario.agent1.clock.skew, beacon.clock.skew
    eb_r = effective_baseband(cp, b1, bb, "direct")
    eb_v = effective_baseband(cp, b1, bb, "relay")
    dt = scenario.sample_interval
    fs = 1.0 / dt
    for eb in (eb_r, eb_v):
        _check_nyquist(beacon.signal, eb, fs)
    t = sample_times(scenario.n_samples, dt)
    r = _copy(beacon.signal, eb_r, t)
    v = _copy(beacon.signal, eb_v, t)
    if noise and scenario.noise_psd > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise is on")
        scale = math.sqrt(scenario.noise_psd / dt / 2)
        r = r + scale * (rng.standard_normal(t.size) + 1j * rng.standard_normal(t.size))
        v = v + scale * (rng.standard_normal(t.size) + 1j * rng.standard_normal(t.size))
    return WaveformPair(r, v, fs)


# ---------------------------------------------------------------------------
# cross-ambiguity oracle


def _shift(x: np.ndarray, tau: float, fs: float, n_fft: int) -> np.ndarray:
    """Band-limited delay of ``x`` by ``tau`` seconds (zero padded, no wrap)."""
    spec = np.fft.fft(x, n_fft)
    f = np.fft.fftfreq(n_fft, 1.0 / fs)
    return np.fft.ifft(spec * np.exp(-2j * np.pi * f * tau))[: x.size]


def caf_surface(pair: WaveformPair, tau_grid, xi_grid) -> np.ndarray:
    """``|sum_l v[l] conj(r(t_l - tau)) exp(+i 2 pi xi t_l)|`` on the grid, shape (n_tau, n_xi)."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    xi_grid = np.asarray(xi_grid, dtype=float)
    fs = pair.sample_rate_hz
    t = pair.times
    n_fft = 1 << (2 * t.size - 1).bit_length()
    steer = np.exp(2j * np.pi * np.outer(t, xi_grid))
    out = np.empty((tau_grid.size, xi_grid.size))
    for i, tau in enumerate(tau_grid):
        prod = pair.v_samples * np.conj(_shift(pair.r_samples, tau, fs, n_fft))
        out[i] = np.abs(prod @ steer)
    return out


def _quadratic_peak(z: np.ndarray) -> tuple[float, float]:
    """Sub-cell peak offset of a 3x3 patch from a least-squares quadratic in both axes."""
    ii, jj = np.mgrid[-1:2, -1:2]
    a = np.column_stack([np.ones(9), ii.ravel(), jj.ravel(), ii.ravel() ** 2,
                         jj.ravel() ** 2, (ii * jj).ravel()])
    c0, ci, cj, cii, cjj, cij = np.linalg.lstsq(a, z.ravel(), rcond=None)[0]
    hess = np.array([[2 * cii, cij], [cij, 2 * cjj]])
    if np.linalg.det(hess) <= 0 or hess[0, 0] >= 0:
        # not a proper maximum: fall back to independent 1-D parabolas
        di = -ci / (2 * cii) if cii < 0 else 0.0
        dj = -cj / (2 * cjj) if cjj < 0 else 0.0
        return float(np.clip(di, -1, 1)), float(np.clip(dj, -1, 1))
    d = np.linalg.solve(hess, -np.array([ci, cj]))
    return float(np.clip(d[0], -1, 1)), float(np.clip(d[1], -1, 1))


def cross_ambiguity_oracle(pair: WaveformPair, tau_grid, xi_grid) -> tuple[float, float]:
    """Delay and frequency of ``v`` relative to ``r`` from the CAF maximum on uniform grids.

    The peak cell is refined with a quadratic fit to the log-magnitude over its
    3x3 neighbourhood.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    xi_grid = np.asarray(xi_grid, dtype=float)
    surf = caf_surface(pair, tau_grid, xi_grid)
    i, j = np.unravel_index(np.argmax(surf), surf.shape)
    if i in (0, tau_grid.size - 1) or j in (0, xi_grid.size - 1):
        raise PeakAtGridEdge(
            f"CAF peak at grid edge (tau index {i}/{tau_grid.size}, xi index {j}/{xi_grid.size})"
        )
    patch = np.log(np.maximum(surf[i - 1:i + 2, j - 1:j + 2], np.finfo(float).tiny))
    di, dj = _quadratic_peak(patch)
    return (float(tau_grid[i] + di * (tau_grid[1] - tau_grid[0])),
            float(xi_grid[j] + dj * (xi_grid[1] - xi_grid[0])))


def _coarse_by_freq(pair: WaveformPair, max_lag: int, max_freq: float) -> tuple[float, float]:
    """One FFT correlation over lags per Doppler bin of width ``1/(2 T_ob)``."""
    fs = pair.sample_rate_hz
    t = pair.times
    n = t.size
    t_ob = n / fs
    n_fft = 1 << (2 * n - 1).bit_length()
    xi_coarse = np.arange(-max_freq, max_freq + 1e-12, 1.0 / (2 * t_ob))
    r_spec = np.conj(np.fft.fft(pair.r_samples, n_fft))
    lags = np.r_[np.arange(0, max_lag + 1), np.arange(-max_lag, 0)]
    best = (-1.0, 0, 0.0)
    for xi in xi_coarse:
        x = pair.v_samples * np.exp(2j * np.pi * xi * t)
        corr = np.abs(np.fft.ifft(np.fft.fft(x, n_fft) * r_spec))
        sel = np.r_[corr[: max_lag + 1], corr[n_fft - max_lag:]]
        k = int(np.argmax(sel))
        if sel[k] > best[0]:
            best = (float(sel[k]), int(lags[k]), float(xi))
    return best[1] / fs, best[2]


def _coarse_by_lag(pair: WaveformPair, max_lag: int, max_freq: float) -> tuple[float, float]:
    """One FFT over time per integer lag; covers every Doppler up to ``max_freq`` at once."""
    fs = pair.sample_rate_hz
    n = pair.r_samples.size
    n_fft = sfft.next_fast_len(2 * n)
    xi_axis = np.fft.fftfreq(n_fft, 1.0 / fs)
    band = np.abs(xi_axis) <= max_freq
    best = (-1.0, 0, 0.0)
    for lag in range(-max_lag, max_lag + 1):
        # r(t_l - lag*dt) is r[l - lag]
        if lag >= 0:
            prod = pair.v_samples[lag:] * np.conj(pair.r_samples[: n - lag])
        else:
            prod = pair.v_samples[: n + lag] * np.conj(pair.r_samples[-lag:])
        # |sum_l prod[l] exp(+i 2 pi xi l dt)| is the CAF magnitude; inverse FFT has that sign
        spec = sfft.ifft(prod, n_fft, norm="forward")
        mag = np.abs(spec) * band
        k = int(np.argmax(mag))
        if mag[k] > best[0]:
            best = (float(mag[k]), lag, float(xi_axis[k]))
    return best[1] / fs, best[2]


def caf_search(pair: WaveformPair, max_delay: float, max_freq: float) -> tuple[float, float]:
    """Coarse-to-fine CAF search over ``|tau| <= max_delay``, ``|xi| <= max_freq``.

    The coarse stage scans integer-sample lags and a Doppler grid of step
    ``1/(2 T_ob)``, looping over whichever axis is shorter. Chirped pulses put a
    long, nearly flat ridge through the CAF, so the coarse maximum may sit far
    along it; the fine stage therefore runs a trust-region Newton search on
    ``log|CAF|`` with a 3x3 finite-difference stencil, in units of
    ``min(T, 1/(8 W))`` and ``1/(8 T_ob)``. ``log|CAF|`` is close to quadratic
    around the peak, so a few steps follow the ridge to it. A refined peak
    outside the window raises :class:`PeakAtGridEdge`.
    """
    fs = pair.sample_rate_hz
    dt = 1.0 / fs
    t = pair.times
    t_ob = t.size * dt
    _, w_rms, _ = rms_properties(pair.r_samples, dt)

    n = t.size
    max_lag = min(int(math.ceil(max_delay * fs)) + 1, n - 1)
    n_xi = int(2 * max_freq * 2 * t_ob) + 1
    if 2 * max_lag + 1 <= n_xi:
        tau0, xi0 = _coarse_by_lag(pair, max_lag, max_freq)
    else:
        tau0, xi0 = _coarse_by_freq(pair, max_lag, max_freq)

    tau_unit = min(dt, 1.0 / (8 * w_rms))
    xi_unit = 1.0 / (8 * t_ob)
    # padding by the search half-width keeps the circular shift from wrapping
    n_fft = sfft.next_fast_len(n + 2 * max_lag + 16)
    r_spec = sfft.fft(pair.r_samples, n_fft)
    f = np.fft.fftfreq(n_fft, dt)
    cache = {}

    def stencil(z):
        """-log|CAF| on the 3x3 unit stencil around ``z``: value, gradient, Hessian."""
        key = (float(z[0]), float(z[1]))
        if key not in cache:
            vals = np.empty((3, 3))
            for i in range(3):
                tau = tau0 + (z[0] + i - 1) * tau_unit
                shifted = sfft.ifft(r_spec * np.exp(-2j * np.pi * f * tau))[:n]
                prod = pair.v_samples * np.conj(shifted)
                for j in range(3):
                    xi = xi0 + (z[1] + j - 1) * xi_unit
                    vals[i, j] = -math.log(max(abs(np.sum(prod * np.exp(2j * np.pi * xi * t))), 1e-300))
            g = np.array([vals[2, 1] - vals[0, 1], vals[1, 2] - vals[1, 0]]) / 2
            h01 = (vals[2, 2] - vals[2, 0] - vals[0, 2] + vals[0, 0]) / 4
            h = np.array([[vals[2, 1] - 2 * vals[1, 1] + vals[0, 1], h01],
                          [h01, vals[1, 2] - 2 * vals[1, 1] + vals[1, 0]]])
            cache.clear()
            cache[key] = (vals[1, 1], g, h)
        return cache[key]

    res = minimize(lambda z: stencil(z)[0], np.zeros(2), method="trust-exact",
                   jac=lambda z: stencil(z)[1], hess=lambda z: stencil(z)[2],
                   options={"gtol": 1e-14, "maxiter": 200, "initial_trust_radius": 4.0,
                            "max_trust_radius": 1e7})
    tau_hat = float(tau0 + res.x[0] * tau_unit)
    xi_hat = float(xi0 + res.x[1] * xi_unit)
    if abs(tau_hat) > max_lag * dt or abs(xi_hat) > max_freq:
        raise PeakAtGridEdge(
            f"CAF peak outside the search window (tau={tau_hat:.6g} s, xi={xi_hat:.6g} Hz); "
            "widen max_delay or max_freq"
        )
    return tau_hat, xi_hat


# ---------------------------------------------------------------------------
# waveform dump: one text header line, then little-endian interleaved float64 (re, im)

_WAVE_MAGIC = "soopwave v1"


def write_waveform(path, samples, sample_rate_hz: float) -> None:
    samples = np.asarray(samples, dtype=complex)
    header = f"{_WAVE_MAGIC} {samples.size} {sample_rate_hz!r}\n".encode("ascii")
    body = np.empty(2 * samples.size, dtype="<f8")
    body[0::2] = samples.real
    body[1::2] = samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_waveform(path) -> tuple[np.ndarray, float]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    parts = raw[:nl].decode("ascii").split()
    if " ".join(parts[:2]) != _WAVE_MAGIC or len(parts) != 4:
        raise ValueError(f"{path}: not a {_WAVE_MAGIC} file")
    n, fs = int(parts[2]), float(parts[3])
    body = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if body.size != 2 * n:
        raise ValueError(f"{path}: expected {n} samples, found {body.size // 2}")
    return body[0::2] + 1j * body[1::2], fs

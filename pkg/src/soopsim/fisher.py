"""Fisher information for the two-agent asynchronous-clock problem.

Parameter vector ``x = [p1, p2, v1, v2, omega1, omega2, {beta_b, omega_b}]`` and
intermediate vector ``y = [T12, D12, omega1, omega2, {T1b, T2b, D1b, D2b, beta_b, omega_b}]``.
``F_x = (2 / P0) E_beta[J F_y J^T]`` with ``J = dy/dx`` (rows x, columns y). The
equivalent FIM of the agent states is the Schur complement of the clock block.

All reports are in SI units: information in 1/m^2, 1/(m/s)^2 and 1/(m m/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MomentUndefined, NonStaticScenario, SingularNuisanceBlock
from .geometry import Scenario, doppler_position_gradient, unit_direction
from .signals import Kinematics, SignalSpec, chain_params_from, intensities, kinematics

PINV_RTOL = 1e-12


# ---------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class ParamLayout:
    """Index maps for ``x`` and ``y``; every matrix routine addresses entries through these."""

    L: int
    N: int

    @property
    def n_x(self) -> int:
        return 4 * self.L + 2 + 2 * self.N

    @property
    def n_y(self) -> int:
        return 4 + 6 * self.N

    @property
    def n_state(self) -> int:
        return 4 * self.L

    def p1(self):
        return slice(0, self.L)

    def p2(self):
        return slice(self.L, 2 * self.L)

    def v1(self):
        return slice(2 * self.L, 3 * self.L)

    def v2(self):
        return slice(3 * self.L, 4 * self.L)

    @property
    def omega1(self) -> int:
        return 4 * self.L

    @property
    def omega2(self) -> int:
        return 4 * self.L + 1

    def beta_b(self, b: int) -> int:
        return 4 * self.L + 2 + 2 * b

    def omega_b(self, b: int) -> int:
        return 4 * self.L + 3 + 2 * b

    def state(self) -> np.ndarray:
        return np.arange(self.n_state)

    def nuisance(self) -> np.ndarray:
        return np.arange(self.n_state, self.n_x)

    # y side: y0 = [T12, D12, omega1, omega2]; y_b = [T1b, T2b, D1b, D2b, beta_b, omega_b]
    Y0 = ("T12", "D12", "omega1", "omega2")
    YB = ("T1b", "T2b", "D1b", "D2b", "beta_b", "omega_b")

    def y0(self) -> slice:
        return slice(0, 4)

    def yb(self, b: int) -> slice:
        return slice(4 + 6 * b, 10 + 6 * b)


def layout_of(scenario: Scenario) -> ParamLayout:
    return ParamLayout(scenario.dim, scenario.n_beacons)


# ---------------------------------------------------------------------------
# x <-> y maps and the Jacobian


def x_vector(scenario: Scenario) -> np.ndarray:
    lay = layout_of(scenario)
    x = np.empty(lay.n_x)
    x[lay.p1()] = scenario.agent1.position
    x[lay.p2()] = scenario.agent2.position
    x[lay.v1()] = scenario.agent1.velocity
    x[lay.v2()] = scenario.agent2.velocity
    x[lay.omega1] = scenario.agent1.clock.offset
    x[lay.omega2] = scenario.agent2.clock.offset
    for b, beacon in enumerate(scenario.beacons):
        x[lay.beta_b(b)] = beacon.clock.skew
        x[lay.omega_b(b)] = beacon.clock.offset
    return x


def scenario_from_x(scenario: Scenario, x) -> Scenario:
    lay = layout_of(scenario)
    x = np.asarray(x, dtype=float)
    out = scenario.with_state(x[lay.p1()], x[lay.p2()], x[lay.v1()], x[lay.v2()])
    skews, offsets = out.clock_arrays()
    offsets[0], offsets[1] = x[lay.omega1], x[lay.omega2]
    for b in range(lay.N):
        skews[2 + b] = x[lay.beta_b(b)]
        offsets[2 + b] = x[lay.omega_b(b)]
    return out.with_clocks(skews, offsets)


def y_vector(scenario: Scenario) -> np.ndarray:
    """Evaluate ``y(x)`` directly from the kinematics (no derivative information)."""
    lay = layout_of(scenario)
    y = np.empty(lay.n_y)
    k0 = kinematics(scenario, scenario.beacons[0])
    y[lay.y0()] = [k0.t12, k0.d12, scenario.agent1.clock.offset, scenario.agent2.clock.offset]
    for b, beacon in enumerate(scenario.beacons):
        k = kinematics(scenario, beacon)
        y[lay.yb(b)] = [k.t1b, k.t2b, k.d1b, k.d2b, beacon.clock.skew, beacon.clock.offset]
    return y


def jacobian_J(scenario: Scenario) -> np.ndarray:
    """``J = dy/dx`` with rows indexed by x and columns by y."""
    lay = layout_of(scenario)
    c = scenario.light_speed
    f0 = scenario.comm_carrier_hz
    a1, a2 = scenario.agent1, scenario.agent2
    J = np.zeros((lay.n_x, lay.n_y))

    u12 = unit_direction(a1.position, a2.position)
    w12 = doppler_position_gradient(a1.position, a1.velocity - a2.velocity, a2.position, f0)
    J[lay.p1(), 0] = u12 / c
    J[lay.p2(), 0] = -u12 / c
    J[lay.p1(), 1] = -w12 / c
    J[lay.p2(), 1] = w12 / c
    J[lay.v1(), 1] = -f0 * u12 / c
    J[lay.v2(), 1] = f0 * u12 / c
    J[lay.omega1, 2] = 1.0
    J[lay.omega2, 3] = 1.0

    for b, beacon in enumerate(scenario.beacons):
        fb = beacon.carrier_hz
        col = lay.yb(b).start
        u1 = unit_direction(a1.position, beacon.position)
        u2 = unit_direction(a2.position, beacon.position)
        w1 = doppler_position_gradient(a1.position, a1.velocity, beacon.position, fb)
        w2 = doppler_position_gradient(a2.position, a2.velocity, beacon.position, fb)
        J[lay.p1(), col] = u1 / c
        J[lay.p2(), col + 1] = u2 / c
        J[lay.p1(), col + 2] = -w1 / c
        J[lay.v1(), col + 2] = -fb * u1 / c
        J[lay.p2(), col + 3] = -w2 / c
        J[lay.v2(), col + 3] = -fb * u2 / c
        J[lay.beta_b(b), col + 4] = 1.0
        J[lay.omega_b(b), col + 5] = 1.0
    return J


# ---------------------------------------------------------------------------
# Laurent monomials in (beta_1, beta_2, beta_b) for exact Gamma expectations


class Laurent:
    """Sparse Laurent polynomial in the three independent skews ``(beta_1, beta_2, beta_b)``."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0}

    @classmethod
    def var(cls, index: int) -> Laurent:
        exp = [0, 0, 0]
        exp[index] = 1
        return cls({tuple(exp): 1.0})

    @staticmethod
    def _lift(other):
        if isinstance(other, Laurent):
            return other
        return Laurent({(0, 0, 0): float(other)})

    def __add__(self, other):
        other = self._lift(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return Laurent(out)

    __radd__ = __add__

    def __neg__(self):
        return Laurent({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        out: dict = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = (k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2])
                out[k] = out.get(k, 0.0) + v1 * v2
        return Laurent(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Laurent):
            if len(other.terms) != 1:
                raise ValueError("can only divide by a monomial")
            (k, v), = other.terms.items()
            inv = Laurent({(-k[0], -k[1], -k[2]): 1.0 / v})
            return self * inv
        return Laurent({k: v / other for k, v in self.terms.items()})

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def expect(self, sigmas: Sequence[float]) -> float:
        return sum(
            coef * gamma_moment(k[0], sigmas[0]) * gamma_moment(k[1], sigmas[1])
            * gamma_moment(k[2], sigmas[2])
            for k, coef in self.terms.items()
        )


def gamma_moment(k: int, sigma: float) -> float:
    """``E[beta^k]`` for the mean-one Gamma skew with standard deviation ``sigma``."""
    s2 = sigma * sigma
    if k >= 0:
        return math.prod(1 + i * s2 for i in range(k))
    denom = math.prod(1 - i * s2 for i in range(1, -k + 1))
    if denom <= 0:
        raise MomentUndefined(f"E[beta^{k}] undefined for sigma = {sigma}")
    return 1.0 / denom


def _is_symbolic(*vals) -> bool:
    return any(isinstance(v, Laurent) for v in vals)


def _mat(rows, symbolic: bool):
    """Stack a nested list of scalars/arrays/Laurents into a ``(..., r, c)`` array."""
    if symbolic:
        out = np.empty((len(rows), len(rows[0])), dtype=object)
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                out[i, j] = v if isinstance(v, Laurent) else Laurent._lift(v)
        return out
    flat = np.broadcast_arrays(*[np.asarray(v, dtype=float) for row in rows for v in row])
    arr = np.stack(flat, axis=-1)
    return arr.reshape(arr.shape[:-1] + (len(rows), len(rows[0])))


# ---------------------------------------------------------------------------
# per-beacon derivative blocks


@dataclass(frozen=True)
class EtaBlocks:
    """Derivatives of ``(Delta, Upsilon)`` and ``(Lambda, Psi)`` w.r.t. ``y_0`` and ``y_b``.

    Shapes ``(4, 2)`` and ``(6, 2)``: rows follow the y ordering, columns the eta pair.
    """

    dmu_dy0: np.ndarray
    dmu_dyb: np.ndarray
    dth_dy0: np.ndarray
    dth_dyb: np.ndarray


def eta_values(y0, yb, f_b: float, f_0: float, beta_1, beta_2):
    """``(Delta, Upsilon, Lambda, Psi)`` as functions of the intermediate parameters."""
    t12, d12, om1, om2 = y0
    t1b, t2b, d1b, d2b, beta_b, om_b = yb
    cp = chain_params_from(Kinematics(t1b, t2b, t12, d1b, d2b, d12), f_b, f_0,
                           beta_1, beta_2, beta_b, om1, om2, om_b)
    return np.array([cp.delta, cp.upsilon, cp.lambda_cap, cp.psi])


def eta_derivative_blocks(scenario: Scenario, b: int, beta_1, beta_2, beta_b) -> EtaBlocks:
    """Analytic eta derivatives; skews may be floats, arrays (batched) or :class:`Laurent`."""
    beacon = scenario.beacons[b]
    k = kinematics(scenario, beacon)
    fb, f0 = beacon.carrier_hz, scenario.comm_carrier_hz
    g1b, g2b, g12 = k.gammas(fb, f0)
    om1, om2 = scenario.agent1.clock.offset, scenario.agent2.clock.offset
    sym = _is_symbolic(beta_1, beta_2, beta_b)

    dmu_dy0 = _mat([[0, 0], [0, 0], [-beta_b / beta_1, 0], [0, 0]], sym)
    dmu_dyb = _mat([
        [beta_b, 0],
        [0, 0],
        [0, beta_b],
        [0, 0],
        [k.t1b - om1 / beta_1, fb * g1b],
        [-1, 0],
    ], sym)
    dth_dy0 = _mat([
        [g2b * beta_b, 0],
        [0, beta_b * g2b * fb / f0 + beta_2 * (1 - fb / f0)],
        [0, 0],
        [-beta_b / beta_2, 0],
    ], sym)
    dth_dyb = _mat([
        [0, 0],
        [beta_b, 0],
        [0, 0],
        [k.t12 * beta_b / fb, g12 * beta_b],
        [k.t2b + k.t12 * g2b - om2 / beta_2, fb * g12 * g2b],
        [-1, 0],
    ], sym)
    return EtaBlocks(dmu_dy0, dmu_dyb, dth_dy0, dth_dyb)


def h_core(spec: SignalSpec, beta_1, beta_b):
    """Diagonal of the 2x2 information core for ``(delay, frequency)`` of one copy.

    ``4 pi^2 P beta_1 diag(W^2 / beta_b, T^2 / beta_b^3)``; returned as a full
    matrix for float inputs and as the pair of diagonal entries otherwise.
    """
    k = 4 * math.pi**2 * spec.energy
    d0 = k * spec.rms_bandwidth_hz**2 * beta_1 / beta_b
    d1 = k * spec.rms_time_s**2 * beta_1 / (beta_b * beta_b * beta_b)
    if np.ndim(d0) == 0 and not isinstance(d0, Laurent):
        return np.diag([float(d0), float(d1)])
    return (d0, d1)


def _quad(ma, h, mb, symbolic: bool):
    """``sum_k ma[..., i, k] h_k mb[..., j, k]``."""
    if symbolic:
        out = np.empty((ma.shape[0], mb.shape[0]), dtype=object)
        for i in range(ma.shape[0]):
            for j in range(mb.shape[0]):
                out[i, j] = ma[i, 0] * h[0] * mb[j, 0] + ma[i, 1] * h[1] * mb[j, 1]
        return out
    hd = np.stack(np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in h]), axis=-1)
    return np.einsum("...ik,...k,...jk->...ij", ma, hd, mb)


@dataclass(frozen=True)
class FimBlocks:
    """Per-beacon pieces of ``F_y`` (unscaled by ``2 / P0``).

    ``E`` is 6x6 over ``y_b``, ``H`` 4x4 over ``y_0``, ``K`` 4x6 couples ``y_0`` to ``y_b``.
    """

    E: np.ndarray
    H: np.ndarray
    K: np.ndarray

    # partitions
    @property
    def A_E(self):
        return self.E[..., :4, :4]

    @property
    def B_E(self):
        return self.E[..., :4, 4:]

    @property
    def D_E(self):
        return self.E[..., 4:, 4:]

    @property
    def A_H(self):
        return self.H[..., :2, :2]

    @property
    def B_H(self):
        return self.H[..., :2, 2:]

    @property
    def D_H(self):
        return self.H[..., 2:, 2:]

    @property
    def A_K(self):
        return self.K[..., :2, :4]

    @property
    def B_K(self):
        return self.K[..., :2, 4:]

    @property
    def C_K(self):
        return self.K[..., 2:, :4]

    @property
    def D_K(self):
        return self.K[..., 2:, 4:]


def _beacon_blocks(scenario: Scenario, b: int, beta_1, beta_2, beta_b) -> FimBlocks:
    sym = _is_symbolic(beta_1, beta_2, beta_b)
    eta = eta_derivative_blocks(scenario, b, beta_1, beta_2, beta_b)
    hm = h_core(scenario.beacons[b].signal, beta_1, beta_b)
    h = (hm[0, 0], hm[1, 1]) if isinstance(hm, np.ndarray) and hm.ndim == 2 else hm
    E = _quad(eta.dmu_dyb, h, eta.dmu_dyb, sym) + _quad(eta.dth_dyb, h, eta.dth_dyb, sym)
    H = _quad(eta.dmu_dy0, h, eta.dmu_dy0, sym) + _quad(eta.dth_dy0, h, eta.dth_dy0, sym)
    K = _quad(eta.dmu_dy0, h, eta.dmu_dyb, sym) + _quad(eta.dth_dy0, h, eta.dth_dyb, sym)
    return FimBlocks(E, H, K)


def fim_y(scenario: Scenario, skews=None) -> list[FimBlocks]:
    """``F_y`` blocks for realized skews ``[beta_1, beta_2, beta_b...]`` (default: scenario clocks).

    Entries of ``skews`` may be arrays of equal length for batched evaluation.
    """
    if skews is None:
        skews, _ = scenario.clock_arrays()
    return [_beacon_blocks(scenario, b, skews[0], skews[1], skews[2 + b])
            for b in range(scenario.n_beacons)]


def _skew_stds(scenario: Scenario, b: int) -> tuple[float, float, float]:
    return (scenario.agent1.clock.skew_std, scenario.agent2.clock.skew_std,
            scenario.beacons[b].clock.skew_std)


def expected_fim_y(scenario: Scenario) -> list[FimBlocks]:
    """``E_beta[F_y]`` blocks by exact Gamma moments of each Laurent term."""
    b1, b2, bb = Laurent.var(0), Laurent.var(1), Laurent.var(2)
    out = []
    for b in range(scenario.n_beacons):
        sig = _skew_stds(scenario, b)
        blk = _beacon_blocks(scenario, b, b1, b2, bb)
        ev = np.vectorize(lambda z: z.expect(sig), otypes=[float])
        out.append(FimBlocks(ev(blk.E), ev(blk.H), ev(blk.K)))
    return out


def sampled_fim_y(scenario: Scenario, n_samples: int, seed: int) -> list[FimBlocks]:
    """Monte-Carlo average of ``F_y`` blocks over jointly drawn skews."""
    rng = np.random.default_rng(seed)

    def draw(sigma):
        if sigma == 0:
            return np.ones(n_samples)
        return rng.gamma(1.0 / sigma**2, sigma**2, size=n_samples)

    beta_1 = draw(scenario.agent1.clock.skew_std)
    beta_2 = draw(scenario.agent2.clock.skew_std)
    out = []
    for b in range(scenario.n_beacons):
        beta_b = draw(scenario.beacons[b].clock.skew_std)
        blk = _beacon_blocks(scenario, b, beta_1, beta_2, beta_b)
        out.append(FimBlocks(blk.E.mean(axis=0), blk.H.mean(axis=0), blk.K.mean(axis=0)))
    return out


def assemble_fim_y(scenario: Scenario, blocks: list[FimBlocks], scaled: bool = True) -> np.ndarray:
    """Full ``F_y``; with ``scaled`` each beacon carries its ``2 SNR_b / P_b`` factor."""
    lay = layout_of(scenario)
    F = np.zeros((lay.n_y, lay.n_y))
    y0 = lay.y0()
    for b, blk in enumerate(blocks):
        spec = scenario.beacons[b].signal
        s = 2 * spec.snr / spec.energy if scaled else 1.0
        yb = lay.yb(b)
        F[y0, y0] += s * blk.H
        F[y0, yb] = s * blk.K
        F[yb, y0] = s * blk.K.T
        F[yb, yb] = s * blk.E
    return F


def fim_x_expected(scenario: Scenario, skew_sampling: str = "closed_moments",
                   n_samples: int = 100_000, seed: int = 0) -> np.ndarray:
    """Modified-Bayesian FIM of ``x`` in SI units (already multiplied by ``2 / P0``)."""
    if skew_sampling == "closed_moments":
        blocks = expected_fim_y(scenario)
    elif skew_sampling == "monte_carlo":
        blocks = sampled_fim_y(scenario, n_samples, seed)
    else:
        raise ValueError(f"unknown skew_sampling {skew_sampling!r}")
    J = jacobian_J(scenario)
    F = J @ assemble_fim_y(scenario, blocks) @ J.T
    return 0.5 * (F + F.T)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EfimReport:
    efim: np.ndarray
    method: str
    L: int
    crlb_cov: np.ndarray = field(init=False)
    rmse_bounds: dict = field(init=False)
    eigenvalues: np.ndarray = field(init=False)
    rank: int = field(init=False)
    nuisance_rank: int | None = None
    labels: tuple | None = None

    def __post_init__(self):
        self.efim = 0.5 * (self.efim + self.efim.T)
        self.eigenvalues = np.linalg.eigvalsh(self.efim)
        cov, rank = sym_inverse(self.efim)
        self.rank = rank
        full = self.efim.shape[0]
        self.crlb_cov = cov if rank == full else np.full_like(self.efim, np.inf)
        if self.labels is None:
            self.labels = ("p1", "p2", "v1", "v2")[: self.efim.shape[0] // self.L]
        self.rmse_bounds = _bounds(self.crlb_cov, self.L, self.labels)

    @property
    def invertible(self) -> bool:
        return self.rank == self.efim.shape[0]

    @property
    def eigen_ratio(self) -> float:
        ev = self.eigenvalues
        return float(ev[0] / ev[-1]) if ev[-1] > 0 else float("nan")


def _bounds(cov: np.ndarray, L: int, names) -> dict:
    out = {}
    for i, name in enumerate(names):
        blk = np.diag(cov)[i * L:(i + 1) * L]
        out[name] = float(math.sqrt(np.sum(blk))) if np.all(np.isfinite(blk)) and np.all(blk >= 0) \
            else float("inf")
    return out


def sym_inverse(m: np.ndarray, rtol: float = PINV_RTOL) -> tuple[np.ndarray, int]:
    """Inverse of a symmetric matrix by Jacobi-scaled eigendecomposition.

    Eigenvalues below ``rtol * lambda_max`` (after scaling to unit diagonal) are
    dropped, giving the pseudo-inverse; the retained count is returned as rank.
    """
    m = 0.5 * (m + m.T)
    d = np.sqrt(np.abs(np.diag(m)))
    d[d == 0] = 1.0
    ms = m / np.outer(d, d)
    w, v = np.linalg.eigh(ms)
    lam_max = np.max(np.abs(w)) if w.size else 0.0
    if lam_max == 0:
        return np.zeros_like(m), 0
    keep = w > rtol * lam_max
    inv = (v[:, keep] / w[keep]) @ v[:, keep].T
    return inv / np.outer(d, d), int(keep.sum())


def crlb_bounds(report: EfimReport) -> dict:
    """Root-trace CRLB per agent block (metres for positions, m/s for velocities)."""
    return dict(report.rmse_bounds)


def schur_complement(m: np.ndarray, keep, drop) -> tuple[np.ndarray, int]:
    keep = np.asarray(keep)
    drop = np.asarray(drop)
    a = m[np.ix_(keep, keep)]
    bmat = m[np.ix_(keep, drop)]
    dmat = m[np.ix_(drop, drop)]
    dinv, rank = sym_inverse(dmat)
    s = a - bmat @ dinv @ bmat.T
    return 0.5 * (s + s.T), rank


def efim_schur(fim_x: np.ndarray, layout: ParamLayout, strict: bool = False) -> EfimReport:
    """EFIM of the agent states by eliminating ``[omega1, omega2, {beta_b, omega_b}]``.

    A rank-deficient clock block is pseudo-inverted and its rank recorded; with
    ``strict`` it raises :class:`SingularNuisanceBlock` instead.
    """
    nuis = layout.nuisance()
    dmat = fim_x[np.ix_(nuis, nuis)]
    if not np.all(np.isfinite(dmat)) or not np.any(dmat):
        raise SingularNuisanceBlock("clock block of F_x is zero or non-finite")
    s, rank = schur_complement(fim_x, layout.state(), nuis)
    if strict and rank < nuis.size:
        raise SingularNuisanceBlock(f"clock block rank {rank} < {nuis.size}")
    rep = EfimReport(s, "numeric_schur", layout.L)
    rep.nuisance_rank = rank
    return rep


# ---------------------------------------------------------------------------
# closed forms


@dataclass(frozen=True)
class GeometryVectors:
    phi_b: np.ndarray      # (N, 2L)
    phi_s: np.ndarray      # (2L,)
    rho_b: np.ndarray      # (N, 2L)
    rho_s: np.ndarray      # (2L,)
    lam: np.ndarray        # ranging intensities (N,)
    eps: np.ndarray        # Doppler intensities (N,)
    lam_bar: np.ndarray    # normalized ranging weights (N,)
    carriers: np.ndarray   # (N,)
    f0: float
    sigma_s: float


def common_offset_weight(sigma_1: float, sigma_2: float) -> float:
    """Weight of the common-offset penalty, ``2[1 + (s1 - 3 s1 s2) / (1 - 3 s2 + s1 s2)]``, s = sigma^2."""
    s1, s2 = sigma_1**2, sigma_2**2
    return 2.0 * (1.0 + (s1 - 3 * s1 * s2) / (1 - 3 * s2 + s1 * s2))


def geometry_vectors(scenario: Scenario) -> GeometryVectors:
    a1, a2 = scenario.agent1, scenario.agent2
    f0 = scenario.comm_carrier_hz
    c = scenario.light_speed
    u12 = unit_direction(a1.position, a2.position)
    w12 = doppler_position_gradient(a1.position, a1.velocity - a2.velocity, a2.position, f0)
    phi_b, rho_b, lam, eps, fbs = [], [], [], [], []
    for beacon in scenario.beacons:
        fb = beacon.carrier_hz
        u1 = unit_direction(a1.position, beacon.position)
        u2 = unit_direction(a2.position, beacon.position)
        w1 = doppler_position_gradient(a1.position, a1.velocity, beacon.position, fb)
        w2 = doppler_position_gradient(a2.position, a2.velocity, beacon.position, fb)
        phi_b.append(np.r_[u1, -u2])
        rho_b.append(np.r_[w1, -w2])
        lb, eb = intensities(beacon.signal, c)
        lam.append(lb)
        eps.append(eb)
        fbs.append(fb)
    lam = np.array(lam)
    return GeometryVectors(
        phi_b=np.array(phi_b), phi_s=np.r_[u12, -u12],
        rho_b=np.array(rho_b), rho_s=np.r_[w12, -w12],
        lam=lam, eps=np.array(eps), lam_bar=lam / lam.sum(),
        carriers=np.array(fbs), f0=f0,
        sigma_s=common_offset_weight(a1.clock.skew_std, a2.clock.skew_std),
    )


XI_CONVENTIONS = ("reduced", "printed")


def xi_matrix(gv: GeometryVectors, convention: str = "reduced") -> np.ndarray:
    """Common-offset penalty ``weight * m m^T`` with ``m = sum_b lam_bar_b (phi_b - phi_s)``.

    ``printed`` uses ``weight = sigma_s`` as printed with the closed form;
    ``reduced`` uses ``sigma_s / 2``, which is what the block reductions
    produce (and what the numeric Schur complement converges to).
    """
    if convention not in XI_CONVENTIONS:
        raise ValueError(f"convention must be one of {XI_CONVENTIONS}")
    m = gv.lam_bar @ (gv.phi_b - gv.phi_s)
    weight = gv.sigma_s if convention == "printed" else gv.sigma_s / 2
    return weight * np.outer(m, m)


def efim_closed_form(scenario: Scenario, xi_convention: str = "reduced") -> EfimReport:
    """Closed-form EFIM of ``[p1, p2, v1, v2]``; independent of every clock offset."""
    gv = geometry_vectors(scenario)
    L = scenario.dim
    xi = xi_matrix(gv, xi_convention)
    pp = np.zeros((2 * L, 2 * L))
    pv = np.zeros((2 * L, 2 * L))
    vv = np.zeros((2 * L, 2 * L))
    for b, beacon in enumerate(scenario.beacons):
        dphi = gv.phi_b[b] - gv.phi_s
        drho = gv.rho_b[b] - gv.rho_s
        fphi = gv.carriers[b] * gv.phi_b[b] - gv.f0 * gv.phi_s
        e_eff = gv.eps[b] / (1 - beacon.clock.skew_std**2)
        pp += gv.lam[b] * (np.outer(dphi, dphi) - xi) + e_eff * np.outer(drho, drho)
        pv += e_eff * np.outer(drho, fphi)
        vv += e_eff * np.outer(fphi, fphi)
    efim = 0.5 * np.block([[pp, pv], [pv.T, vv]])
    return EfimReport(efim, "closed_form", L)


def efim_static(scenario: Scenario, xi_convention: str = "reduced") -> EfimReport:
    """Position-only EFIM ``1/2 sum_b lam_b (Phi_b - Xi)`` for static agents."""
    if not scenario.is_static:
        raise NonStaticScenario("static EFIM requires zero agent velocities")
    gv = geometry_vectors(scenario)
    xi = xi_matrix(gv, xi_convention)
    F = np.zeros((2 * scenario.dim, 2 * scenario.dim))
    for b in range(scenario.n_beacons):
        dphi = gv.phi_b[b] - gv.phi_s
        F += gv.lam[b] * (np.outer(dphi, dphi) - xi)
    return EfimReport(0.5 * F, "static", scenario.dim)


def efim_synchronized(scenario: Scenario) -> EfimReport:
    """Position EFIM of static agents with all clocks known and ideal."""
    if not scenario.is_static:
        raise NonStaticScenario("synchronized EFIM requires zero agent velocities")
    gv = geometry_vectors(scenario)
    L = scenario.dim
    u12 = gv.phi_s[:L]
    F = np.zeros((2 * L, 2 * L))
    for b in range(scenario.n_beacons):
        u1b = gv.phi_b[b][:L]
        u2b = -gv.phi_b[b][L:]
        dphi = gv.phi_b[b] - gv.phi_s
        corr = np.block([
            [np.outer(u1b, u12) + np.outer(u12, u1b), np.outer(u1b, u2b - u12)],
            [np.outer(u2b - u12, u1b), np.zeros((L, L))],
        ])
        F += gv.lam[b] * (np.outer(dphi, dphi) + corr)
    return EfimReport(F, "synchronized", L)


def efim_known_s2(scenario: Scenario, fim_x: np.ndarray | None = None) -> EfimReport:
    """Numeric EFIM of agent 1 alone when agent 2's position and velocity are known."""
    lay = layout_of(scenario)
    if fim_x is None:
        fim_x = fim_x_expected(scenario)
    L = lay.L
    keep = np.r_[np.arange(L), np.arange(2 * L, 3 * L)]
    drop = lay.nuisance()
    s, _ = schur_complement(fim_x, keep, drop)
    return EfimReport(s, "known_s2", L, labels=("p1", "v1"))


def efim_known_s2_closed(scenario: Scenario, xi_convention: str = "reduced") -> EfimReport:
    """Closed form for agent 1 alone, with agent-2 terms dropped from every direction vector."""
    gv = geometry_vectors(scenario)
    L = scenario.dim
    u12 = gv.phi_s[:L]
    w12 = gv.rho_s[:L]
    dphis = gv.phi_b[:, :L] - u12
    m = gv.lam_bar @ dphis
    weight = gv.sigma_s if xi_convention == "printed" else gv.sigma_s / 2
    xi = weight * np.outer(m, m)
    pp = np.zeros((L, L))
    pv = np.zeros((L, L))
    vv = np.zeros((L, L))
    for b, beacon in enumerate(scenario.beacons):
        dphi = dphis[b]
        drho = gv.rho_b[b][:L] - w12
        fphi = gv.carriers[b] * gv.phi_b[b][:L] - gv.f0 * u12
        e_eff = gv.eps[b] / (1 - beacon.clock.skew_std**2)
        pp += gv.lam[b] * (np.outer(dphi, dphi) - xi) + e_eff * np.outer(drho, drho)
        pv += e_eff * np.outer(drho, fphi)
        vv += e_eff * np.outer(fphi, fphi)
    # layout [p1, v1] reported as a 2L matrix
    return EfimReport(0.5 * np.block([[pp, pv], [pv.T, vv]]), "known_s2_closed", L, labels=("p1", "v1"))

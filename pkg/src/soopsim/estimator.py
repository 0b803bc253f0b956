"""Differential TDOA/FDOA localization of both agents.

Each beacon yields one TDOA and one FDOA at agent 1 (relayed copy minus direct
copy). Differencing against a reference beacon removes the agent clock offsets
and the inter-agent link terms, which are common to every beacon. A damped
Gauss-Newton solve on the whitened differentials then recovers
``(p1, p2, v1, v2)``.

The FDOA also carries ``f_b (beta_1 - beta_2)``, which differs between beacons
through the carrier. By default the solver fits one extra scalar ``kappa`` so
that ``dfdoa_b`` gains ``kappa (f_b - f_ref)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientBeacons, SingularNormalEquations, UnknownReference
from .geometry import Scenario
from .signals import SignalSpec, chain_params, intensities

_COND_LIMIT = 1e14


@dataclass(frozen=True)
class MeasurementSet:
    beacon_ids: tuple[str, ...]
    tdoa_s: np.ndarray
    fdoa_hz: np.ndarray
    sigma_tau_s: np.ndarray
    sigma_xi_hz: np.ndarray

    def __post_init__(self):
        for name in ("tdoa_s", "fdoa_hz", "sigma_tau_s", "sigma_xi_hz"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.beacon_ids)
        if any(getattr(self, f).shape != (n,) for f in ("tdoa_s", "fdoa_hz", "sigma_tau_s", "sigma_xi_hz")):
            raise ValueError("one measurement per beacon required")
        if np.any(self.sigma_tau_s <= 0) or np.any(self.sigma_xi_hz <= 0):
            raise ValueError("measurement sigmas must be positive")


@dataclass(frozen=True)
class DiffMeasurements:
    """Differentials ``z_b - z_ref`` for every non-reference beacon, in scenario order."""

    reference_id: str
    beacon_ids: tuple[str, ...]
    dtdoa_s: np.ndarray
    dfdoa_hz: np.ndarray
    cov_tdoa: np.ndarray
    cov_fdoa: np.ndarray


@dataclass(frozen=True)
class EstimateResult:
    p1_hat: np.ndarray
    p2_hat: np.ndarray
    v1_hat: np.ndarray
    v2_hat: np.ndarray
    iterations: int
    converged: bool
    cost: float
    condition_number: float
    kappa: float = 0.0

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.p1_hat, self.p2_hat, self.v1_hat, self.v2_hat])


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    step_rtol: float = 1e-9
    grad_tol: float = 1e-12
    damping: float = 1e-3
    fd_step_position_m: float = 1e-3
    fd_step_velocity_mps: float = 1e-4
    fit_carrier_skew: bool = True


# ---------------------------------------------------------------------------
# measurement side


def measurement_model(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free ``(tau_b, xi_b)`` per beacon under the scenario's realized clocks."""
    beta_1 = scenario.agent1.clock.skew
    tau, xi = [], []
    for beacon in scenario.beacons:
        cp = chain_params(scenario, beacon)
        beta_b = beacon.clock.skew
        relay = beta_1 * cp.lambda_cap / (beta_b * cp.gamma_12 * cp.gamma_2b)
        direct = beta_1 * cp.delta / (beta_b * cp.gamma_1b)
        tau.append(relay - direct)
        xi.append((cp.psi - cp.upsilon) / beta_1)
    return np.array(tau), np.array(xi)


def noise_model(spec: SignalSpec) -> tuple[float, float]:
    """Per-beacon ``(sigma_tau [s], sigma_xi [Hz])``; the sqrt(2) accounts for noise on both copies."""
    k = 8 * math.pi**2 * spec.snr
    return (math.sqrt(2) / math.sqrt(k * spec.rms_bandwidth_hz**2),
            math.sqrt(2) / math.sqrt(k * spec.rms_time_s**2))


def simulate_measurements(scenario: Scenario, rng: np.random.Generator,
                          noise_scale: float = 1.0) -> MeasurementSet:
    tau, xi = measurement_model(scenario)
    sig = np.array([noise_model(b.signal) for b in scenario.beacons])
    s_tau, s_xi = sig[:, 0], sig[:, 1]
    n = scenario.n_beacons
    tau_hat = tau + noise_scale * s_tau * rng.standard_normal(n)
    xi_hat = xi + noise_scale * s_xi * rng.standard_normal(n)
    return MeasurementSet(tuple(b.id for b in scenario.beacons), tau_hat, xi_hat, s_tau, s_xi)


def reference_beacon(scenario: Scenario) -> str:
    """Beacon with the largest ranging intensity; ties go to the lexicographically lowest id."""
    lam = {b.id: intensities(b.signal, scenario.light_speed)[0] for b in scenario.beacons}
    best = max(lam.values())
    return min(i for i, v in lam.items() if v == best)


def _diff_cov(sig: np.ndarray, ref: int) -> np.ndarray:
    others = np.delete(sig, ref)
    return np.diag(others**2) + sig[ref] ** 2


def difference(meas: MeasurementSet, ref: str) -> DiffMeasurements:
    if ref not in meas.beacon_ids:
        raise UnknownReference(ref)
    if len(meas.beacon_ids) < 2:
        raise InsufficientBeacons("differencing needs at least two beacons")
    r = meas.beacon_ids.index(ref)
    ids = tuple(i for i in meas.beacon_ids if i != ref)
    return DiffMeasurements(
        reference_id=ref,
        beacon_ids=ids,
        dtdoa_s=np.delete(meas.tdoa_s - meas.tdoa_s[r], r),
        dfdoa_hz=np.delete(meas.fdoa_hz - meas.fdoa_hz[r], r),
        cov_tdoa=_diff_cov(meas.sigma_tau_s, r),
        cov_fdoa=_diff_cov(meas.sigma_xi_hz, r),
    )


# ---------------------------------------------------------------------------
# model side


@dataclass(frozen=True)
class _Geometry:
    positions: np.ndarray   # (N, L)
    carriers: np.ndarray    # (N,)
    c: float
    ref: int
    others: np.ndarray      # indices of non-reference beacons, in diff order


def _geometry(scenario: Scenario, diff: DiffMeasurements) -> _Geometry:
    ids = [b.id for b in scenario.beacons]
    try:
        ref = ids.index(diff.reference_id)
        others = np.array([ids.index(i) for i in diff.beacon_ids], dtype=int)
    except ValueError as exc:
        raise UnknownReference(str(exc)) from None
    return _Geometry(
        positions=np.array([b.position for b in scenario.beacons]),
        carriers=np.array([b.carrier_hz for b in scenario.beacons]),
        c=scenario.light_speed, ref=ref, others=others,
    )


def _split(state: np.ndarray, L: int):
    return state[:L], state[L:2 * L], state[2 * L:3 * L], state[3 * L:4 * L]


def _ranges(p, v, geo: _Geometry):
    d = p - geo.positions
    r = np.linalg.norm(d, axis=1)
    if np.any(r == 0):
        from .errors import DegenerateGeometry

        raise DegenerateGeometry("candidate position coincides with a beacon")
    delay = r / geo.c
    doppler = -(geo.carriers / geo.c) * np.einsum("ij,j->i", d / r[:, None], v)
    return delay, doppler


def _predict(state: np.ndarray, geo: _Geometry, L: int) -> tuple[np.ndarray, np.ndarray]:
    p1, p2, v1, v2 = _split(state, L)
    t1, d1 = _ranges(p1, v1, geo)
    t2, d2 = _ranges(p2, v2, geo)
    tau = t2 - t1
    xi = d2 - d1
    return tau[geo.others] - tau[geo.ref], xi[geo.others] - xi[geo.ref]


def predict_differentials(state, scenario: Scenario, diff_or_ref) -> tuple[np.ndarray, np.ndarray]:
    """Predicted ``(dtdoa, dfdoa)`` for ``state = [p1, p2, v1, v2]`` with ideal clocks.

    ``diff_or_ref`` is a :class:`DiffMeasurements` or a reference beacon id (then
    every other beacon is used in scenario order).
    """
    if isinstance(diff_or_ref, DiffMeasurements):
        diff = diff_or_ref
    else:
        ids = tuple(b.id for b in scenario.beacons if b.id != diff_or_ref)
        diff = DiffMeasurements(diff_or_ref, ids, np.zeros(len(ids)), np.zeros(len(ids)),
                                np.eye(len(ids)), np.eye(len(ids)))
    geo = _geometry(scenario, diff)
    return _predict(np.asarray(state, dtype=float), geo, scenario.dim)


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    if np.any(w <= 0):
        raise ValueError("differential covariance is not positive definite")
    return (v / np.sqrt(w)) @ v.T


# ---------------------------------------------------------------------------
# solver


def solve(diff: DiffMeasurements, scenario: Scenario, init,
          options: SolverOptions | None = None) -> EstimateResult:
    """Levenberg-Marquardt on whitened differentials, finite-difference Jacobian.

    Only beacon positions, carriers and the light speed are taken from ``scenario``.
    """
    opt = options or SolverOptions()
    L = scenario.dim
    geo = _geometry(scenario, diff)
    n_state = 4 * L
    n_unknown = n_state + (1 if opt.fit_carrier_skew else 0)
    n_meas = 2 * len(diff.beacon_ids)
    if n_meas < n_unknown:
        raise InsufficientBeacons(
            f"{len(diff.beacon_ids) + 1} beacons give {n_meas} differentials for {n_unknown} unknowns")

    wt = _inv_sqrt(diff.cov_tdoa)
    wf = _inv_sqrt(diff.cov_fdoa)
    carrier_col = geo.carriers[geo.others] - geo.carriers[geo.ref]
    steps = np.r_[np.full(2 * L, opt.fd_step_position_m), np.full(2 * L, opt.fd_step_velocity_mps)]

    def residual(theta):
        dt, df = _predict(theta[:n_state], geo, L)
        if opt.fit_carrier_skew:
            df = df + theta[n_state] * carrier_col
        return np.r_[wt @ (diff.dtdoa_s - dt), wf @ (diff.dfdoa_hz - df)]

    def jacobian(theta):
        jac = np.empty((n_meas, n_unknown))
        for i in range(n_state):
            e = np.zeros(n_unknown)
            e[i] = steps[i]
            jac[:, i] = (residual(theta + e) - residual(theta - e)) / (2 * steps[i])
        if opt.fit_carrier_skew:
            jac[:, n_state] = np.r_[np.zeros(len(carrier_col)), -(wf @ carrier_col)]
        return jac

    theta = np.r_[np.asarray(init, dtype=float).reshape(-1), np.zeros(n_unknown - n_state)]
    if opt.fit_carrier_skew:
        # kappa enters linearly: start from its weighted least-squares value
        _, df0 = _predict(theta[:n_state], geo, L)
        col = wf @ carrier_col
        theta[n_state] = float(col @ (wf @ (diff.dfdoa_hz - df0)) / (col @ col))
    r = residual(theta)
    cost = float(r @ r)
    mu = opt.damping
    converged = False
    cond = float("nan")
    it = 0
    for it in range(1, opt.max_iterations + 1):
        jac = jacobian(theta)
        g = jac.T @ r
        a = jac.T @ jac
        scale = np.sqrt(np.diag(a))
        scale[scale == 0] = 1.0
        a_s = a / np.outer(scale, scale)
        cond = float(np.linalg.cond(a_s))
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularNormalEquations(
                "normal equations are numerically singular",
                {"condition_number": cond, "iteration": it, "cost": cost},
            )
        if np.linalg.norm(g / scale) < opt.grad_tol:
            converged = True
            break
        accepted = False
        while mu < 1e12:
            step_s = np.linalg.solve(a_s + mu * np.eye(n_unknown), -g / scale)
            step = step_s / scale
            cand = theta + step
            r_c = residual(cand)
            cost_c = float(r_c @ r_c)
            if cost_c <= cost:
                theta, r, mu = cand, r_c, max(mu / 10, 1e-12)
                small = np.linalg.norm(step[:n_state]) < opt.step_rtol * (1 + np.linalg.norm(theta[:n_state]))
                cost = cost_c
                accepted = True
                break
            mu *= 10
        if not accepted:
            # no descent direction left at machine precision
            converged = np.linalg.norm(g / scale) < math.sqrt(opt.grad_tol) * (1 + math.sqrt(cost))
            break
        if small:
            converged = True
            break

    p1, p2, v1, v2 = _split(theta[:n_state], L)
    return EstimateResult(p1.copy(), p2.copy(), v1.copy(), v2.copy(), it, converged, cost, cond,
                          float(theta[n_state]) if opt.fit_carrier_skew else 0.0)


def perturbed_init(scenario: Scenario, rng: np.random.Generator,
                   position_std: float = 100.0, velocity_std: float = 5.0) -> np.ndarray:
    L = scenario.dim
    truth = np.concatenate([scenario.agent1.position, scenario.agent2.position,
                            scenario.agent1.velocity, scenario.agent2.velocity])
    noise = np.r_[position_std * rng.standard_normal(2 * L), velocity_std * rng.standard_normal(2 * L)]
    return truth + noise

"""3D spring-loaded inverted pendulum (SLIP) hopping simulation.

Flight and stance phases are integrated with a fixed-step classical RK4
scheme; phase-switching events are localized by bisection on the step
length.  Leg placement angles are expressed in the heading frame: the x
axis points along the horizontal velocity at touchdown (or along +x when
the horizontal speed vanishes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import (
    GroundPenetration,
    InterstitialMissed,
    LegCollapse,
    NoTouchdown,
)

DEFAULT_DT = 1e-4
EVENT_TIME_TOL = 1e-9
MIN_LEG_FRACTION = 0.2
FLIGHT_T_MAX = 50.0
STANCE_T_MAX = 10.0

# kernel status codes
_OK = 0
_NO_EVENT = 1
_COLLAPSE = 2
_GROUND = 3
_MISSED = 4

_FLIGHT = 0
_STANCE = 1


@dataclass(frozen=True)
class SlipParams:
    m: float = 10.0
    k: float = 16000.0
    l0: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        for name in ("m", "k", "l0", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SlipParams.{name} must be strictly positive")


@dataclass(frozen=True)
class BodyState:
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    t: float = 0.0

    def as_tuple(self):
        return (self.x, self.y, self.z, self.vx, self.vy, self.vz)

    def energy(self, params: SlipParams, foot=None) -> float:
        """Total mechanical energy; includes spring energy when a foot point is given."""
        ke = 0.5 * params.m * (self.vx**2 + self.vy**2 + self.vz**2)
        pe = params.m * params.g * self.z
        if foot is not None:
            leg = math.dist((self.x, self.y, self.z), foot)
            pe += 0.5 * params.k * (params.l0 - leg) ** 2
        return ke + pe


@dataclass(frozen=True)
class LegPlacement:
    alpha: float  # pitch, pi/2 is a vertical leg
    beta: float  # yaw relative to the horizontal heading


@dataclass(frozen=True)
class ContactState:
    body: BodyState
    foot: tuple  # (x_f, y_f, 0)


@dataclass(frozen=True)
class InterstitialState:
    x: float
    y: float
    vx: float
    vy: float
    vz: float
    k: int = 0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])


class PerturbationField:
    """State-dependent planar displacement plus truncated-Gaussian noise.

    ``f`` maps a planar position to a 2-vector displacement.  The noise is
    drawn per axis from N(0, sigma^2) truncated to [-bound, bound].
    """

    def __init__(self, f: Callable[[float, float], np.ndarray], sigma: float = 0.0,
                 bound: float = 0.0, seed: Optional[int] = None):
        if sigma < 0 or bound < 0:
            raise ValueError("noise parameters must be non-negative")
        if sigma > 0 and bound <= 0:
            raise ValueError("noise support bound must be positive when sigma > 0")
        self.f = f
        self.sigma = float(sigma)
        self.bound = float(bound)
        self.seed = seed

    def displacement(self, x: float, y: float) -> np.ndarray:
        return np.asarray(self.f(x, y), dtype=float)

    def sample_noise(self, rng: Optional[np.random.Generator]) -> np.ndarray:
        if self.sigma == 0.0:
            return np.zeros(2)
        if rng is None:
            raise ValueError("a random generator is required for non-zero noise")
        return truncated_normal(rng, self.sigma, self.bound, 2)

    @classmethod
    def constant(cls, dx: float, dy: float, sigma=0.0, bound=0.0):
        offset = np.array([dx, dy], dtype=float)
        return cls(lambda x, y: offset, sigma, bound)

    @classmethod
    def from_gp_prior(cls, width: float, height: float, cell: float, lengthscale: float,
                      amplitude: float, sigma: float, bound: float, seed: int):
        """Sample a smooth field from a squared-exponential GP prior.

        Samples are drawn independently per axis at the cell centers and
        bilinearly interpolated; positions outside the center grid are clamped.
        """
        nx = int(round(width / cell))
        ny = int(round(height / cell))
        xs = (np.arange(nx) + 0.5) * cell
        ys = (np.arange(ny) + 0.5) * cell
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        cov = amplitude**2 * np.exp(-0.5 * d2 / lengthscale**2)
        chol = np.linalg.cholesky(cov + 1e-9 * amplitude**2 * np.eye(len(pts)))
        rng = np.random.default_rng(seed)
        grids = [(chol @ rng.standard_normal(len(pts))).reshape(nx, ny) for _ in range(2)]

        def f(x, y):
            fx = np.clip((x - xs[0]) / cell, 0.0, nx - 1.0)
            fy = np.clip((y - ys[0]) / cell, 0.0, ny - 1.0)
            i0 = min(int(fx), nx - 2) if nx > 1 else 0
            j0 = min(int(fy), ny - 2) if ny > 1 else 0
            tx = fx - i0
            ty = fy - j0
            out = np.empty(2)
            for a, grid in enumerate(grids):
                if nx == 1 or ny == 1:
                    out[a] = grid[min(int(round(fx)), nx - 1), min(int(round(fy)), ny - 1)]
                    continue
                out[a] = ((1 - tx) * (1 - ty) * grid[i0, j0] + tx * (1 - ty) * grid[i0 + 1, j0]
                          + (1 - tx) * ty * grid[i0, j0 + 1] + tx * ty * grid[i0 + 1, j0 + 1])
            return out

        field = cls(f, sigma, bound, seed)
        field.center_grid = (xs, ys, grids)
        return field


def truncated_normal(rng: np.random.Generator, sigma: float, bound: float, size: int) -> np.ndarray:
    """Rejection sampler for N(0, sigma^2) restricted to [-bound, bound]."""
    out = np.empty(size)
    for i in range(size):
        while True:
            v = rng.normal(0.0, sigma)
            if -bound <= v <= bound:
                out[i] = v
                break
    return out


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True)
def _deriv(phase, s, fx, fy, fz, k_m, l0, g):
    if phase == _FLIGHT:
        return (s[3], s[4], s[5], 0.0, 0.0, -g)
    lx = s[0] - fx
    ly = s[1] - fy
    lz = s[2] - fz
    leg = math.sqrt(lx * lx + ly * ly + lz * lz)
    c = k_m * (l0 / leg - 1.0)
    return (s[3], s[4], s[5], c * lx, c * ly, c * lz - g)


@njit(cache=True)
def _axpy(s, h, d):
    return (s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2],
            s[3] + h * d[3], s[4] + h * d[4], s[5] + h * d[5])


@njit(cache=True)
def _rk4(phase, s, h, fx, fy, fz, k_m, l0, g):
    k1 = _deriv(phase, s, fx, fy, fz, k_m, l0, g)
    k2 = _deriv(phase, _axpy(s, 0.5 * h, k1), fx, fy, fz, k_m, l0, g)
    k3 = _deriv(phase, _axpy(s, 0.5 * h, k2), fx, fy, fz, k_m, l0, g)
    k4 = _deriv(phase, _axpy(s, h, k3), fx, fy, fz, k_m, l0, g)
    w = h / 6.0
    return (s[0] + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            s[1] + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
            s[2] + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
            s[3] + w * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
            s[4] + w * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4]),
            s[5] + w * (k1[5] + 2 * k2[5] + 2 * k3[5] + k4[5]))


@njit(cache=True)
def _leg_length(s, fx, fy, fz):
    return math.sqrt((s[0] - fx) ** 2 + (s[1] - fy) ** 2 + (s[2] - fz) ** 2)


@njit(cache=True)
def _fall_crossed(s, z_ev):
    return s[2] - z_ev <= 0.0 and s[5] < 0.0


@njit(cache=True)
def _flight_to_height(s, z_ev, g, dt, t_max, t_tol):
    """Integrate ballistic flight until the CoM descends through z_ev."""
    t = 0.0
    was_above = s[2] - z_ev > 0.0
    while t < t_max:
        s_new = _rk4(_FLIGHT, s, dt, 0.0, 0.0, 0.0, 1.0, 1.0, g)
        if was_above and _fall_crossed(s_new, z_ev):
            lo = 0.0
            hi = dt
            while hi - lo > t_tol:
                mid = 0.5 * (lo + hi)
                if _fall_crossed(_rk4(_FLIGHT, s, mid, 0.0, 0.0, 0.0, 1.0, 1.0, g), z_ev):
                    hi = mid
                else:
                    lo = mid
            return _OK, _rk4(_FLIGHT, s, hi, 0.0, 0.0, 0.0, 1.0, 1.0, g), t + hi
        if s_new[2] - z_ev > 0.0:
            was_above = True
        s = s_new
        t += dt
    return _NO_EVENT, s, t


@njit(cache=True)
def _stance_to_liftoff(s, fx, fy, fz, k_m, l0, g, dt, t_max, t_tol, min_len):
    t = 0.0
    while t < t_max:
        s_new = _rk4(_STANCE, s, dt, fx, fy, fz, k_m, l0, g)
        leg = _leg_length(s_new, fx, fy, fz)
        if leg >= l0:
            lo = 0.0
            hi = dt
            while hi - lo > t_tol:
                mid = 0.5 * (lo + hi)
                sm = _rk4(_STANCE, s, mid, fx, fy, fz, k_m, l0, g)
                if _leg_length(sm, fx, fy, fz) >= l0:
                    hi = mid
                else:
                    lo = mid
            return _OK, _rk4(_STANCE, s, hi, fx, fy, fz, k_m, l0, g), t + hi
        if leg < min_len:
            return _COLLAPSE, s_new, t + dt
        if s_new[2] <= 0.0:
            return _GROUND, s_new, t + dt
        s = s_new
        t += dt
    return _NO_EVENT, s, t


@njit(cache=True)
def _touchdown(s, alpha, beta, l0, g, dt, t_tol):
    z_td = l0 * math.sin(alpha)
    if s[2] - z_td <= 1e-12 and s[5] < 0.0:
        status = _OK
        s_td = s
        t = 0.0
    else:
        status, s_td, t = _flight_to_height(s, z_td, g, dt, FLIGHT_T_MAX, t_tol)
    hspeed = math.hypot(s_td[3], s_td[4])
    psi = math.atan2(s_td[4], s_td[3]) if hspeed > 1e-9 else 0.0
    ca = math.cos(alpha)
    fx = s_td[0] + l0 * ca * math.cos(psi + beta)
    fy = s_td[1] + l0 * ca * math.sin(psi + beta)
    fz = s_td[2] - l0 * math.sin(alpha)
    return status, s_td, t, fx, fy, fz


@njit(cache=True)
def _hop(x, y, vx, vy, vz, alpha, beta, m, k, l0, g, dt, t_tol, min_frac):
    """Interstitial-to-interstitial hop.  Returns (status, x, y, vx, vy, vz)."""
    s = (x, y, l0, vx, vy, vz)
    status, s_td, _, fx, fy, fz = _touchdown(s, alpha, beta, l0, g, dt, t_tol)
    if status != _OK:
        return status, x, y, vx, vy, vz
    status, s_lo, _ = _stance_to_liftoff(s_td, fx, fy, fz, k / m, l0, g, dt, STANCE_T_MAX,
                                         t_tol, min_frac * l0)
    if status != _OK:
        return status, x, y, vx, vy, vz
    up = max(s_lo[5], 0.0)
    if s_lo[2] + up * up / (2.0 * g) < l0 - 1e-12:
        return _MISSED, x, y, vx, vy, vz
    status, s_i, _ = _flight_to_height(s_lo, l0, g, dt, FLIGHT_T_MAX, t_tol)
    if status != _OK:
        return _MISSED, x, y, vx, vy, vz
    return _OK, s_i[0], s_i[1], s_i[3], s_i[4], s_i[5]


@njit(cache=True)
def _hop_batch(v, alpha, beta, m, k, l0, g, dt, t_tol, min_frac):
    n = v.shape[0]
    status = np.zeros(n, dtype=np.int64)
    out = np.zeros((n, 5))
    for i in range(n):
        r = _hop(0.0, 0.0, v[i, 0], v[i, 1], v[i, 2], alpha[i], beta[i], m, k, l0, g,
                 dt, t_tol, min_frac)
        status[i] = r[0]
        out[i, 0] = r[1]
        out[i, 1] = r[2]
        out[i, 2] = r[3]
        out[i, 3] = r[4]
        out[i, 4] = r[5]
    return status, out


# ---------------------------------------------------------------------------
# public API

def _raise_for(status: int, phase: str):
    if status == _OK:
        return
    if status == _COLLAPSE:
        raise LegCollapse("leg compressed below the minimum length")
    if status == _GROUND:
        raise GroundPenetration("center of mass reached the ground during stance")
    if status == _MISSED:
        raise InterstitialMissed("apex after liftoff stays below the rest leg length")
    if phase == "flight":
        raise NoTouchdown("flight never reached the touchdown surface")
    raise LegCollapse("stance never reached liftoff")


def simulate_flight(state: BodyState, placement: LegPlacement, params: SlipParams,
                    dt: float = DEFAULT_DT) -> ContactState:
    """Ballistic flight until z = l0*sin(alpha) while descending."""
    status, s_td, t, fx, fy, fz = _touchdown(state.as_tuple(), placement.alpha, placement.beta,
                                             params.l0, params.g, dt, EVENT_TIME_TOL)
    _raise_for(status, "flight")
    body = BodyState(*s_td, t=state.t + t)
    return ContactState(body, (fx, fy, fz))


def simulate_stance(contact: ContactState, params: SlipParams, dt: float = DEFAULT_DT) -> BodyState:
    """Spring-mass stance until the leg re-extends to its rest length."""
    fx, fy, fz = contact.foot
    status, s_lo, t = _stance_to_liftoff(contact.body.as_tuple(), fx, fy, fz,
                                         params.k / params.m, params.l0, params.g, dt,
                                         STANCE_T_MAX, EVENT_TIME_TOL,
                                         MIN_LEG_FRACTION * params.l0)
    _raise_for(status, "stance")
    return BodyState(*s_lo, t=contact.body.t + t)


def simulate_to_interstitial(state: BodyState, params: SlipParams, dt: float = DEFAULT_DT) -> BodyState:
    """Flight after liftoff until the CoM descends through z = l0."""
    up = max(state.vz, 0.0)
    if state.z + up * up / (2.0 * params.g) < params.l0 - 1e-12:
        raise InterstitialMissed("apex after liftoff stays below the rest leg length")
    status, s_i, t = _flight_to_height(state.as_tuple(), params.l0, params.g, dt,
                                       FLIGHT_T_MAX, EVENT_TIME_TOL)
    if status != _OK:
        raise InterstitialMissed("flight never crossed the interstitial surface")
    return BodyState(*s_i, t=state.t + t)


def nominal_hop(v_i, placement: LegPlacement, params: SlipParams, dt: float = DEFAULT_DT):
    """Perturbation-free hop from the origin; returns (displacement(2), v_next(3))."""
    status, x, y, vx, vy, vz = _hop(0.0, 0.0, float(v_i[0]), float(v_i[1]), float(v_i[2]),
                                    placement.alpha, placement.beta, params.m, params.k,
                                    params.l0, params.g, dt, EVENT_TIME_TOL, MIN_LEG_FRACTION)
    _raise_for(status, "flight")
    return np.array([x, y]), np.array([vx, vy, vz])


def nominal_hop_batch(v: np.ndarray, alpha: np.ndarray, beta: np.ndarray, params: SlipParams,
                      dt: float = DEFAULT_DT):
    """Vectorized perturbation-free hops.  Returns (ok mask, displacement, v_next)."""
    status, out = _hop_batch(np.ascontiguousarray(v, dtype=float),
                             np.ascontiguousarray(alpha, dtype=float),
                             np.ascontiguousarray(beta, dtype=float),
                             params.m, params.k, params.l0, params.g, dt, EVENT_TIME_TOL,
                             MIN_LEG_FRACTION)
    return status == _OK, out[:, :2], out[:, 2:]


def step_hop(interstitial: InterstitialState, placement: LegPlacement, params: SlipParams,
             pert: Optional[PerturbationField] = None, rng: Optional[np.random.Generator] = None,
             dt: float = DEFAULT_DT) -> InterstitialState:
    """Advance one hop: descent, stance, flight, next interstitial event.

    The perturbation (if any) is added to the planar displacement, evaluated
    at the starting interstitial position.
    """
    disp, v_next = nominal_hop(interstitial.velocity, placement, params, dt)
    if pert is not None:
        disp = disp + pert.displacement(interstitial.x, interstitial.y) + pert.sample_noise(rng)
    return InterstitialState(interstitial.x + disp[0], interstitial.y + disp[1],
                             v_next[0], v_next[1], v_next[2], interstitial.k + 1)


def hop_trajectory(interstitial: InterstitialState, placement: LegPlacement,
                   params: SlipParams, dt: float = DEFAULT_DT):
    """Phase-by-phase states of one unperturbed hop (for inspection and tests)."""
    start = BodyState(interstitial.x, interstitial.y, params.l0,
                      interstitial.vx, interstitial.vy, interstitial.vz)
    contact = simulate_flight(start, placement, params, dt)
    liftoff = simulate_stance(contact, params, dt)
    final = simulate_to_interstitial(liftoff, params, dt)
    return contact, liftoff, final


def with_heading(v_i, heading: float) -> np.ndarray:
    """Rotate a 3D velocity about the vertical axis by ``heading`` radians."""
    c, s = math.cos(heading), math.sin(heading)
    v = np.asarray(v_i, dtype=float)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])


__all__ = [
    "SlipParams", "BodyState", "LegPlacement", "ContactState", "InterstitialState",
    "PerturbationField", "simulate_flight", "simulate_stance", "simulate_to_interstitial",
    "step_hop", "nominal_hop", "nominal_hop_batch", "hop_trajectory", "truncated_normal",
    "with_heading",
]

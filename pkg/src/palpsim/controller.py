"""Hybrid force-motion controller.

Splits the commanded axis forces into a motion part acting in the surface
tangent plane and a force part acting along the estimated surface normal,
via complementary projection matrices built from the normal estimate.
Composition:

    tau = tau_m - tau_f + g - B * p_dot

tau_f is subtracted because the desired force is expressed as the force the
environment applies on the robot.  Free motion uses the motion controller
on all axes; contact (with hysteresis) switches to the hybrid regime.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .robot import ContactDetector

MM = 1e-3  # state is in mm; gains and plant parameters are SI


@dataclass
class ControllerConfig:
    Kp_m: np.ndarray = field(default_factory=lambda: np.full(3, 400.0))  # 1/s^2
    Kd_m: np.ndarray = field(default_factory=lambda: np.full(3, 40.0))   # 1/s
    Kp_f: np.ndarray = field(default_factory=lambda: np.full(3, 1.0))
    Ki_f: np.ndarray = field(default_factory=lambda: np.full(3, 8.0))    # 1/s
    Kv: np.ndarray = field(default_factory=lambda: np.full(3, 250.0))    # N*s/m
    f_hold: float = 1.35          # N, constant-force setpoint
    normal_window: int = 100      # moving-average length for the normal
    integral_clamp: float = 3.0   # N, bound on ||Ki_f * integral||
    contact_on: float = 0.5       # N
    contact_off: float = 0.25     # N

    def __post_init__(self):
        for name in ("Kp_m", "Kd_m", "Kp_f", "Ki_f", "Kv"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape == ():
                v = np.full(3, float(v))
            if v.shape != (3,) or np.any(v < 0):
                raise ValueError(f"{name} must be a non-negative 3-diagonal")
            setattr(self, name, v)


FREE_MOTION = "free_motion"
HYBRID = "hybrid"


class NormalFilter:
    """Moving average of contact forces with an O(1) running sum."""

    def __init__(self, window):
        self.window = int(window)
        self._buf = np.zeros((self.window, 3))
        self._sum = np.zeros(3)
        self._n = 0
        self._head = 0
        self._pushes = 0

    def __len__(self):
        return self._n

    def clear(self):
        self._sum[:] = 0.0
        self._n = 0
        self._head = 0
        self._pushes = 0

    def push(self, f):
        if self._n == self.window:
            self._sum -= self._buf[self._head]
        else:
            self._n += 1
        self._buf[self._head] = f
        self._sum += f
        self._head = (self._head + 1) % self.window
        self._pushes += 1
        if self._pushes % 4096 == 0:  # keep the running sum drift-free
            self._sum = self.forces().sum(axis=0)

    def forces(self):
        if self._n < self.window:
            return self._buf[:self._n].copy()
        return np.roll(self._buf, -self._head, axis=0)

    def mean(self):
        return self._sum / max(self._n, 1)


@dataclass
class ControllerState:
    f_e_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))  # N*s
    normal_history: NormalFilter = None
    n_hat: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    active_regime: str = FREE_MOTION
    detector: ContactDetector = None

    @classmethod
    def fresh(cls, cfg):
        return cls(normal_history=NormalFilter(cfg.normal_window),
                   detector=ContactDetector(cfg.contact_on, cfg.contact_off))


def projection_matrices(n_hat):
    """Force/motion projections from a unit surface normal.

    Omega_f = n n^T selects the constraint direction, Omega_m = I - Omega_f
    the allowable motion plane.
    """
    n = np.asarray(n_hat, dtype=float)
    if abs(np.dot(n, n) - 1.0) > 1e-9:
        raise ValueError("surface normal must be a unit vector")
    omega_f = np.outer(n, n)
    return omega_f, np.eye(3) - omega_f


def estimate_surface_normal(history):
    """Unit mean of buffered environment-on-probe contact forces."""
    forces = np.asarray(history, dtype=float)
    if forces.ndim != 2 or forces.shape[0] < 1:
        raise ValueError("normal estimation needs at least one force sample")
    mean = forces.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-6:
        raise ValueError("mean contact force too small to define a normal")
    return mean / norm


def motion_torque(state, desired, cfg, omega_m, D):
    """Inverse-dynamics motion law projected onto the motion subspace.

    desired carries p_d (mm), p_dot_d (mm/s), p_ddot_d (mm/s^2); output is
    axis force in N.
    """
    e = (desired["p_d"] - state.p) * MM
    e_dot = (desired["p_dot_d"] - state.p_dot) * MM
    acc_ff = desired["p_ddot_d"] * MM
    v = cfg.Kp_m * e + cfg.Kd_m * e_dot + acc_ff
    return omega_m @ (np.asarray(D) * v)


def _integrate_error(st, cfg, f_e, dt):
    """Accumulate the force error; clamp so ||Ki_f * integral|| stays within
    the anti-windup bound.  Returns the integral force contribution (N)."""
    st.f_e_integral = st.f_e_integral + f_e * dt
    contrib = cfg.Ki_f * st.f_e_integral
    mag = math.sqrt(float(contrib @ contrib))
    if mag > cfg.integral_clamp:
        st.f_e_integral = st.f_e_integral * (cfg.integral_clamp / mag)
        contrib = cfg.Ki_f * st.f_e_integral
    return contrib


def force_torque(f_d, f_c, st, cfg, omega_f, p_dot, dt):
    """Force regulation along the constraint direction; updates the integral.

    The velocity term enters with a plus sign here: the hybrid composition
    subtracts tau_f, so the net velocity feedback -Kv*p_dot is dissipative.
    """
    f_e = np.asarray(f_d, dtype=float) - np.asarray(f_c, dtype=float)
    contrib = _integrate_error(st, cfg, f_e, dt)
    raw = f_d + cfg.Kp_f * f_e + contrib + cfg.Kv * (p_dot * MM)
    return omega_f @ raw


_EYE3 = np.eye(3)


def control_step(state, refs, cfg, st, plant):
    """One controller tick: regime bookkeeping plus the composed axis force.

    refs carries the motion targets and f_d (N).  Regime transitions follow
    the contact detector; on first contact the normal seeds from the
    instantaneous force, on release the force integral and normal history
    reset.  Projections are applied directly through n_hat (identical to
    the stated matrix forms, without building the matrices).
    """
    latched = st.detector.update(state.f_c)

    if latched and st.active_regime == FREE_MOTION:
        st.active_regime = HYBRID
        st.normal_history.clear()
        st.normal_history.push(state.f_c)
        st.n_hat = estimate_surface_normal(st.normal_history.forces())
    elif not latched and st.active_regime == HYBRID:
        st.active_regime = FREE_MOTION
        st.f_e_integral = np.zeros(3)
        st.normal_history.clear()

    p_dot = state.p_dot
    friction_comp = plant.B * (p_dot * MM)

    e = (refs["p_d"] - state.p) * MM
    e_dot = (refs["p_dot_d"] - p_dot) * MM
    motion = plant.D * (cfg.Kp_m * e + cfg.Kd_m * e_dot
                        + refs["p_ddot_d"] * MM)

    if st.active_regime == FREE_MOTION:
        return motion + plant.g - friction_comp

    st.normal_history.push(state.f_c)
    mean = st.normal_history.mean()
    norm = math.sqrt(float(mean @ mean))
    if norm > 1e-6:
        st.n_hat = mean / norm
    n = st.n_hat

    tau_m = motion - n * float(n @ motion)  # Omega_m = I - n n^T

    f_d = refs["f_d"]
    f_e = f_d - state.f_c
    contrib = _integrate_error(st, cfg, f_e, plant.dt)
    raw = f_d + cfg.Kp_f * f_e + contrib + cfg.Kv * (p_dot * MM)
    tau_f = n * float(n @ raw)              # Omega_f = n n^T

    return tau_m - tau_f + plant.g - friction_comp

"""3-axis Cartesian robot plant, stepped at a fixed rate.

The three prismatic stages map one-to-one onto Cartesian axes, so joint
torques are axis forces in N.  State positions are in mm; the dynamics are
integrated in SI units internally.  Plant equation (semi-implicit Euler):

    D * p_ddot = tau - B * p_dot - g + f_contact
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import phantom as ph

CONTACT_ON_N = 0.5    # force threshold for contact detection
CONTACT_OFF_N = 0.25  # release threshold (hysteresis against chatter)


@dataclass
class RobotState:
    p: np.ndarray          # position, mm
    p_dot: np.ndarray      # velocity, mm/s
    p_ddot: np.ndarray     # acceleration, mm/s^2
    f_c: np.ndarray        # measured contact force on the robot, N
    in_contact: bool = False

    @classmethod
    def at_rest(cls, p):
        return cls(p=np.asarray(p, dtype=float).copy(),
                   p_dot=np.zeros(3), p_ddot=np.zeros(3), f_c=np.zeros(3))

    def copy(self):
        return RobotState(self.p.copy(), self.p_dot.copy(),
                          self.p_ddot.copy(), self.f_c.copy(), self.in_contact)


@dataclass
class PlantParams:
    D: np.ndarray = field(default_factory=lambda: np.array([8.0, 6.0, 4.0]))   # kg, diagonal
    B: np.ndarray = field(default_factory=lambda: np.array([15.0, 15.0, 15.0]))  # N*s/m
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -39.2]))  # N
    sensor_noise_sigma: float = 0.02  # N, set 0 for deterministic runs
    step_rate: float = 1000.0  # Hz

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if np.any(self.D <= 0):
            raise ValueError("mass matrix diagonal must be positive")
        if np.any(self.B < 0):
            raise ValueError("viscous friction must be non-negative")
        if self.step_rate <= 0:
            raise ValueError("step_rate must be positive")

    @property
    def dt(self):
        return 1.0 / self.step_rate


def step_dynamics(state, tau, plant, model, dt, rng=None, f_contact=None):
    """Advance the plant one step under axis forces tau (N).

    Velocity is updated from the force balance first, then position
    (semi-implicit Euler).  The measured f_c is the phantom contact force
    plus optional Gaussian sensor noise; the dynamics use the true force.
    Position is clamped at the workspace limits with the velocity zeroed
    on the clamped axis.  f_contact, when given, must be the true contact
    force at state.p (lets the caller reuse the previous step's measurement).
    """
    t0, t1, t2 = float(tau[0]), float(tau[1]), float(tau[2])
    if not (math.isfinite(t0) and math.isfinite(t1) and math.isfinite(t2)):
        raise ValueError("non-finite torque input")

    if f_contact is None:
        f_contact = ph.contact_force(model, state.p)

    # mm-based state, SI force balance: p_dot/1000 is m/s
    f_net = (tau - plant.B * (state.p_dot * 1e-3) - plant.g) + f_contact
    acc = (f_net / plant.D) * 1e3  # mm/s^2

    v = state.p_dot + acc * dt
    p = state.p + v * dt

    for i, (lo, hi) in enumerate((model.x_bounds, model.y_bounds, model.z_bounds)):
        if p[i] < lo:
            p[i] = lo
            if v[i] < 0:
                v[i] = 0.0
        elif p[i] > hi:
            p[i] = hi
            if v[i] > 0:
                v[i] = 0.0

    f_meas = ph.contact_force(model, p)
    if rng is not None and plant.sensor_noise_sigma > 0:
        f_meas = f_meas + rng.normal(0.0, plant.sensor_noise_sigma, 3)

    return RobotState(p=p, p_dot=v, p_ddot=acc, f_c=f_meas,
                      in_contact=state.in_contact)


def detect_contact(f_c, latched=False, on=CONTACT_ON_N, off=CONTACT_OFF_N):
    """Contact flag with hysteresis: trips at ||f|| >= on, releases below off."""
    mag = math.sqrt(float(f_c[0]) ** 2 + float(f_c[1]) ** 2 + float(f_c[2]) ** 2)
    if latched:
        return mag >= off
    return mag >= on


class ContactDetector:
    """Stateful wrapper around detect_contact keeping the latch."""

    def __init__(self, on=CONTACT_ON_N, off=CONTACT_OFF_N):
        if off > on:
            raise ValueError("release threshold must not exceed trip threshold")
        self.on = on
        self.off = off
        self.latched = False

    def update(self, f_c):
        self.latched = detect_contact(f_c, self.latched, self.on, self.off)
        return self.latched

    def reset(self):
        self.latched = False
